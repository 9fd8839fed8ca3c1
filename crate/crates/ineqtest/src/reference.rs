//! Straight-from-the-definition reimplementation of the whole pipeline,
//! kept as an agreement oracle for the optimized path.
//!
//! Everything here is written the slow, obvious way: plain double loops
//! over observations, no spatial pre-sorting, no compensated summation,
//! no diagonal shortcuts, and kernel-overlap integrals done by composite
//! Simpson instead of the precontracted Gauss rule. It shares only what
//! defines the method rather than how it is computed: the kernel shape,
//! the grid geometry, the normal-moment constants, and the configuration
//! semantics (degenerate-cell threshold, correlation clamping, weight
//! floors). Tests compare its outputs against the fast pipeline at tight
//! relative tolerance.

use crate::data::Dataset;
use crate::kernel::{ProductKernel, SUPPORT_HALFWIDTH};
use crate::lambda::{CpFunction, LambdaSpec, DEFAULT_T_GRID};
use crate::statistic::{
    self, BaseWeight, TestConfig, DEGENERATE_RHO_SQ_TOL, DEGENERATE_SIGMA_SQ_TOL,
    INVERSE_SE_FLOOR_FRACTION,
};
use crate::{Error, Result};

/// Simpson panel count per axis for the overlap-correlation integrals.
/// One dimension affords a fine rule; higher dimensions tensor it.
fn simpson_points(d: usize) -> usize {
    if d == 1 {
        2001
    } else {
        101
    }
}

/// Composite Simpson over [a, b] with an odd number of points.
fn simpson(a: f64, b: f64, points: usize, f: impl Fn(f64) -> f64) -> f64 {
    assert!(points >= 3 && points % 2 == 1);
    let h = (b - a) / (points - 1) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..points - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Everything the direct-definition run produces, one value per grid
/// point where applicable.
#[derive(Debug, Clone)]
pub struct NaiveReport {
    pub h: f64,
    pub g: Vec<Vec<f64>>,
    pub rho_sq: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub sigma_matrix: Vec<Vec<f64>>,
    pub sigma_hat_sq: f64,
    pub t_stat: f64,
}

/// The overlap correlation of one kernel axis, computed from scratch:
/// t̄(u) = ∫ K(v)K(v−u) dv / ∫ K(v)² dv, both integrals by Simpson.
fn overlap_correlation_tables(kernel: &ProductKernel, u_nodes: &[f64]) -> Vec<Vec<f64>> {
    let s = SUPPORT_HALFWIDTH;
    kernel
        .factors()
        .iter()
        .map(|k1| {
            let norm = simpson(-s, s, 2001, |v| {
                let kv = k1.eval(v);
                kv * kv
            });
            u_nodes
                .iter()
                .map(|&u| {
                    let (lo, hi) = ((-s).max(u - s), s.min(u + s));
                    if lo >= hi {
                        return 0.0;
                    }
                    simpson(lo, hi, 2001, |v| k1.eval(v) * k1.eval(v - u)) / norm
                })
                .collect()
        })
        .collect()
}

/// The u-integral behind one covariance entry:
/// ∫_{[−1,1]^d} c_p(t̂ · Π_k t̄_k(u_k)) du, evaluated by tensor Simpson on
/// precomputed per-axis overlap tables.
struct OverlapIntegral {
    /// Per axis: (t̄ value, Simpson weight) at each u node.
    axes: Vec<Vec<(f64, f64)>>,
}

impl OverlapIntegral {
    fn new(kernel: &ProductKernel) -> Self {
        let d = kernel.dim();
        let points = simpson_points(d);
        let h = 2.0 / (points - 1) as f64;
        let u_nodes: Vec<f64> = (0..points).map(|i| -1.0 + i as f64 * h).collect();
        let tables = overlap_correlation_tables(kernel, &u_nodes);
        let axes = tables
            .into_iter()
            .map(|tbar| {
                tbar.iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let w = if i == 0 || i == points - 1 {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        (t, w * h / 3.0)
                    })
                    .collect()
            })
            .collect();
        Self { axes }
    }

    /// ∫ c_p(t_hat · t̄(u)) du across all axes.
    fn contract(&self, cp: &CpFunction, t_hat: f64) -> f64 {
        let mut acc = vec![(1.0f64, 1.0f64)];
        let mut flat = Vec::new();
        for axis in &self.axes {
            flat.clear();
            for &(t0, w0) in &acc {
                for &(t, w) in axis {
                    flat.push((t0 * t, w0 * w));
                }
            }
            std::mem::swap(&mut acc, &mut flat);
        }
        acc.iter().map(|&(t, w)| w * cp.eval_clamped(t_hat * t)).sum()
    }
}

/// Run the full test from the definitions. Mirrors `run_test`'s contract
/// (same config semantics, same error conditions) while sharing none of
/// its numerics.
pub fn naive_run_test(data: &Dataset, cfg: &TestConfig) -> Result<NaiveReport> {
    cfg.validate()?;
    if data.n() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 observations, got {}",
            data.n()
        )));
    }
    if data.dim() != cfg.domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.domain.dim(),
            got: data.dim(),
        });
    }
    let spec = LambdaSpec::new(cfg.p, cfg.mode)?;
    let kernel = ProductKernel::by_name(&cfg.kernel, data.dim())?;
    let h = cfg.bandwidth.resolve(data)?;
    let grid = statistic::build_grid(cfg)?;
    let cp = CpFunction::new(&spec, &cfg.mc, DEFAULT_T_GRID)?;
    let overlap = OverlapIntegral::new(&kernel);

    let n = data.n();
    let d = data.dim();
    let nj = data.n_outcomes();
    let nf = n as f64;
    let denom = nf * h.powi(d as i32);

    // Kernel estimators, one plain pass per grid point.
    let mut g = vec![vec![0.0; grid.len()]; nj];
    let mut rho_sq = vec![vec![0.0; grid.len()]; nj];
    let mut cross = vec![vec![vec![0.0; grid.len()]; nj]; nj];
    let mut u = vec![0.0; d];
    for gi in 0..grid.len() {
        let x = grid.point(gi);
        for i in 0..n {
            let xi = data.x_row(i);
            for k in 0..d {
                u[k] = (x[k] - xi[k]) / h;
            }
            let kv = kernel.eval_unchecked(&u);
            if kv == 0.0 {
                continue;
            }
            for j in 0..nj {
                let yj = data.y_value(i, j);
                g[j][gi] += yj * kv;
                rho_sq[j][gi] += yj * yj * kv * kv;
                for k in j + 1..nj {
                    cross[j][k][gi] += yj * data.y_value(i, k) * kv * kv;
                }
            }
        }
        for j in 0..nj {
            g[j][gi] /= denom;
            rho_sq[j][gi] /= denom;
            for k in j + 1..nj {
                cross[j][k][gi] /= denom;
                cross[k][j][gi] = cross[j][k][gi];
            }
        }
        for j in 0..nj {
            cross[j][j][gi] = rho_sq[j][gi];
        }
    }

    // Weight tables under the same scheme semantics as the fast path.
    let q_self = overlap.contract(&cp, 1.0);
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(nj);
    match &cfg.weights.base {
        BaseWeight::Uniform => {
            for _ in 0..nj {
                weights.push(vec![1.0; grid.len()]);
            }
        }
        BaseWeight::InverseSe => {
            for j in 0..nj {
                let max_rho_sq = rho_sq[j].iter().fold(0.0_f64, |a, &b| a.max(b));
                if max_rho_sq <= DEGENERATE_RHO_SQ_TOL {
                    return Err(Error::DegenerateVariance(format!(
                        "outcome {j}: the scale estimate vanishes everywhere"
                    )));
                }
                let floor = INVERSE_SE_FLOOR_FRACTION * max_rho_sq.sqrt();
                weights.push(
                    rho_sq[j].iter().map(|&rs| 1.0 / rs.sqrt().max(floor)).collect(),
                );
            }
        }
        BaseWeight::Custom(user) => {
            if user.len() != nj || user.iter().any(|t| t.len() != grid.len()) {
                return Err(Error::InvalidConfig(
                    "custom weights must give one table per outcome, one entry \
                     per grid point"
                        .to_string(),
                ));
            }
            for table in user {
                weights.push(table.clone());
            }
        }
    }
    if cfg.weights.se_rescale {
        for j in 0..nj {
            let mut var = 0.0;
            for gi in 0..grid.len() {
                if rho_sq[j][gi] > DEGENERATE_RHO_SQ_TOL {
                    var += rho_sq[j][gi].powf(spec.p)
                        * weights[j][gi]
                        * weights[j][gi]
                        * grid.cell_weight(gi);
                }
            }
            var *= q_self;
            if var <= DEGENERATE_SIGMA_SQ_TOL {
                return Err(Error::DegenerateVariance(format!(
                    "outcome {j}: base-weight variance is numerically zero"
                )));
            }
            let scale = 1.0 / var.sqrt();
            for w in weights[j].iter_mut() {
                *w *= scale;
            }
        }
    }

    // Γ, â, and the covariance matrix, all as written in the definitions.
    let mean = statistic::mean_penalty(&spec, &cfg.mc)?;
    let mut gamma = vec![0.0; nj];
    let mut a_hat = vec![0.0; nj];
    for j in 0..nj {
        for gi in 0..grid.len() {
            gamma[j] += spec.lambda(g[j][gi]) * weights[j][gi] * grid.cell_weight(gi);
            if rho_sq[j][gi] > DEGENERATE_RHO_SQ_TOL {
                a_hat[j] +=
                    rho_sq[j][gi].powf(0.5 * spec.p) * weights[j][gi] * grid.cell_weight(gi);
            }
        }
        a_hat[j] *= h.powf(-0.5 * d as f64) * mean;
    }

    let mut sigma_matrix = vec![vec![0.0; nj]; nj];
    for j in 0..nj {
        for k in 0..nj {
            let mut entry = 0.0;
            for gi in 0..grid.len() {
                if rho_sq[j][gi] <= DEGENERATE_RHO_SQ_TOL
                    || rho_sq[k][gi] <= DEGENERATE_RHO_SQ_TOL
                {
                    continue;
                }
                let t_hat = (cross[j][k][gi] / (rho_sq[j][gi].sqrt() * rho_sq[k][gi].sqrt()))
                    .clamp(-1.0, 1.0);
                entry += overlap.contract(&cp, t_hat)
                    * rho_sq[j][gi].powf(0.5 * spec.p)
                    * rho_sq[k][gi].powf(0.5 * spec.p)
                    * weights[j][gi]
                    * weights[k][gi]
                    * grid.cell_weight(gi);
            }
            sigma_matrix[j][k] = entry;
        }
    }
    let sigma_hat_sq: f64 = sigma_matrix.iter().flatten().sum();
    if sigma_hat_sq <= DEGENERATE_SIGMA_SQ_TOL {
        return Err(Error::DegenerateVariance(format!(
            "plug-in variance is {sigma_hat_sq:.3e}; the statistic is undefined"
        )));
    }

    let scale = nf.powf(0.5 * spec.p) * h.powf(0.5 * (spec.p - 1.0) * d as f64);
    let mut num = 0.0;
    for j in 0..nj {
        num += scale * gamma[j] - a_hat[j];
    }
    let t_stat = num / sigma_hat_sq.sqrt();

    Ok(NaiveReport { h, g, rho_sq, gamma, a_hat, sigma_matrix, sigma_hat_sq, t_stat })
}
