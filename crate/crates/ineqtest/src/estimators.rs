//! Kernel estimators: the regression numerator ĝ_j(x), the second-moment
//! scale ρ̂_j²(x), and the cross moment ρ̂_jk(x), evaluated pointwise or over
//! a whole grid.
//!
//! All three share one shape: (1/(n·h^d)) Σ_i c_i · κ((x − X_i)/h) with
//! c_i = Y_ji and κ = K for ĝ, and c_i = Y_ji·Y_ki, κ = K² for the ρ̂
//! moments. The grid path pre-sorts observations along the first covariate
//! axis so each evaluation touches only the in-bandwidth window, and it
//! accumulates with compensated summation; it must agree with the plain
//! pointwise sums to reassociation-level error.

use rayon::prelude::*;

use crate::data::{Dataset, EvalGrid};
use crate::kernel::ProductKernel;
use crate::simulation::DgpSpec;
use crate::{Error, Result};

/// Compensated (Kahan) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn validate_point(
    data: &Dataset,
    j: usize,
    kernel: &ProductKernel,
    h: f64,
    x: &[f64],
) -> Result<()> {
    if j >= data.n_outcomes() {
        return Err(Error::IndexOutOfRange { index: j, n_outcomes: data.n_outcomes() });
    }
    if kernel.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: kernel.dim() });
    }
    if x.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: x.len() });
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// ĝ_j(x) = (1/(n·h^d)) Σ_i Y_ji K((x − X_i)/h).
pub fn g_hat(data: &Dataset, j: usize, kernel: &ProductKernel, h: f64, x: &[f64]) -> Result<f64> {
    validate_point(data, j, kernel, h, x)?;
    let d = data.dim();
    let mut u = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..data.n() {
        let xi = data.x_row(i);
        for k in 0..d {
            u[k] = (x[k] - xi[k]) / h;
        }
        let kv = kernel.eval_unchecked(&u);
        if kv != 0.0 {
            acc += data.y_value(i, j) * kv;
        }
    }
    Ok(acc / (data.n() as f64 * h.powi(d as i32)))
}

/// ρ̂_j²(x) = (1/(n·h^d)) Σ_i Y_ji² K²((x − X_i)/h).
pub fn rho_hat_sq(
    data: &Dataset,
    j: usize,
    kernel: &ProductKernel,
    h: f64,
    x: &[f64],
) -> Result<f64> {
    rho_hat_cross(data, j, j, kernel, h, x)
}

/// ρ̂_jk(x) = (1/(n·h^d)) Σ_i Y_ji Y_ki K²((x − X_i)/h); reduces to ρ̂_j² at
/// j = k and is symmetric in (j, k).
pub fn rho_hat_cross(
    data: &Dataset,
    j: usize,
    k_idx: usize,
    kernel: &ProductKernel,
    h: f64,
    x: &[f64],
) -> Result<f64> {
    validate_point(data, j, kernel, h, x)?;
    if k_idx >= data.n_outcomes() {
        return Err(Error::IndexOutOfRange { index: k_idx, n_outcomes: data.n_outcomes() });
    }
    let d = data.dim();
    let mut u = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..data.n() {
        let xi = data.x_row(i);
        for k in 0..d {
            u[k] = (x[k] - xi[k]) / h;
        }
        let kv = kernel.eval_unchecked(&u);
        if kv != 0.0 {
            acc += data.y_value(i, j) * data.y_value(i, k_idx) * kv * kv;
        }
    }
    Ok(acc / (data.n() as f64 * h.powi(d as i32)))
}

/// All kernel estimates over an evaluation grid: ĝ_j and ρ̂_j² for every
/// outcome, plus ρ̂_jk for every pair j < k (needed only when J ≥ 2).
#[derive(Debug, Clone)]
pub struct GridEstimates {
    n_outcomes: usize,
    grid_len: usize,
    /// [j·G + g]
    g: Vec<f64>,
    /// [j·G + g]
    rho_sq: Vec<f64>,
    /// [pair·G + g], pairs (j,k), j < k, lexicographic.
    cross: Vec<f64>,
}

impl GridEstimates {
    /// ĝ_j over the grid.
    pub fn g(&self, j: usize) -> &[f64] {
        &self.g[j * self.grid_len..(j + 1) * self.grid_len]
    }

    /// ρ̂_j² over the grid.
    pub fn rho_sq(&self, j: usize) -> &[f64] {
        &self.rho_sq[j * self.grid_len..(j + 1) * self.grid_len]
    }

    /// ρ̂_jk over the grid for j < k.
    pub fn cross(&self, j: usize, k: usize) -> &[f64] {
        debug_assert!(j < k && k < self.n_outcomes);
        let pair = pair_index(j, k, self.n_outcomes);
        &self.cross[pair * self.grid_len..(pair + 1) * self.grid_len]
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }
}

/// Index of pair (j, k), j < k, in lexicographic order over J outcomes.
fn pair_index(j: usize, k: usize, n_outcomes: usize) -> usize {
    // Pairs before row j: j·J − j(j+1)/2 … then offset within the row.
    j * n_outcomes - j * (j + 1) / 2 + (k - j - 1)
}

/// Evaluates ĝ, ρ̂², and ρ̂_jk for all outcomes over the grid.
///
/// Observations are pre-sorted by the first covariate axis; each grid point
/// then scans only the |x₁ − X_i1| ≤ h/2 window (the kernel's support in
/// that axis) and lets the kernel's early exit drop the rest. Grid points
/// are processed in parallel and written to fixed indices, so results do not
/// depend on the worker count.
pub fn evaluate_grid(
    data: &Dataset,
    kernel: &ProductKernel,
    h: f64,
    grid: &EvalGrid,
) -> Result<GridEstimates> {
    if grid.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: grid.dim() });
    }
    if kernel.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: kernel.dim() });
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
    }

    let n = data.n();
    let d = data.dim();
    let n_out = data.n_outcomes();
    let n_pairs = n_out * (n_out - 1) / 2;
    let grid_len = grid.len();
    let half = h * crate::kernel::SUPPORT_HALFWIDTH;

    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        data.x_value(a as usize, 0)
            .total_cmp(&data.x_value(b as usize, 0))
    });
    let first_axis_sorted: Vec<f64> = order
        .iter()
        .map(|&i| data.x_value(i as usize, 0))
        .collect();

    // Divide rather than multiply by a reciprocal so a window sum equal to
    // the pointwise estimator's sum yields bit-identical values.
    let denom = n as f64 * h.powi(d as i32);
    let per_point: Vec<Vec<f64>> = (0..grid_len)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |u, gi| {
                let x = grid.point(gi);
                let lo = first_axis_sorted.partition_point(|&v| v < x[0] - half);
                let hi = first_axis_sorted.partition_point(|&v| v <= x[0] + half);
                let mut acc = vec![KahanSum::default(); 2 * n_out + n_pairs];
                for &oi in &order[lo..hi] {
                    let i = oi as usize;
                    let xi = data.x_row(i);
                    for k in 0..d {
                        u[k] = (x[k] - xi[k]) / h;
                    }
                    let kv = kernel.eval_unchecked(u);
                    if kv == 0.0 {
                        continue;
                    }
                    let kv2 = kv * kv;
                    for j in 0..n_out {
                        let y = data.y_value(i, j);
                        acc[j].add(y * kv);
                        acc[n_out + j].add(y * y * kv2);
                    }
                    let mut pair = 0;
                    for j in 0..n_out {
                        for k in j + 1..n_out {
                            acc[2 * n_out + pair].add(
                                data.y_value(i, j) * data.y_value(i, k) * kv2,
                            );
                            pair += 1;
                        }
                    }
                }
                acc.iter().map(|a| a.value() / denom).collect()
            },
        )
        .collect();

    let mut g = vec![0.0; n_out * grid_len];
    let mut rho_sq = vec![0.0; n_out * grid_len];
    let mut cross = vec![0.0; n_pairs * grid_len];
    for (gi, vals) in per_point.iter().enumerate() {
        for j in 0..n_out {
            g[j * grid_len + gi] = vals[j];
            rho_sq[j * grid_len + gi] = vals[n_out + j];
        }
        for pair in 0..n_pairs {
            cross[pair * grid_len + gi] = vals[2 * n_out + pair];
        }
    }
    Ok(GridEstimates { n_outcomes: n_out, grid_len, g, rho_sq, cross })
}

/// Population counterpart ρ_j²(x) = E[Y_j²|X=x]·f(x)·∫K²(u)du for a
/// simulation design with analytic moments; the oracle that power
/// predictions studentize against.
pub fn pop_rho_sq(dgp: &DgpSpec, kernel: &ProductKernel, x: &[f64]) -> Result<f64> {
    if kernel.dim() != dgp.dim() {
        return Err(Error::DimensionMismatch { expected: dgp.dim(), got: kernel.dim() });
    }
    if x.len() != dgp.dim() {
        return Err(Error::DimensionMismatch { expected: dgp.dim(), got: x.len() });
    }
    let density = dgp.density(x);
    if density == 0.0 {
        return Ok(0.0);
    }
    let m = dgp.mean(x);
    let s = dgp.noise_scale(x);
    Ok((m * m + s * s) * density * kernel.int_k2())
}
