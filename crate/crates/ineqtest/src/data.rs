//! Input data, evaluation domains, and integration grids.
//!
//! A [`Dataset`] holds n observations of (Y ∈ R^J, X ∈ R^d) in row-major
//! storage. A [`DomainBox`] is the axis-aligned region the test integrates
//! over, and an [`EvalGrid`] is a tensor-product midpoint grid on it whose
//! cell weights sum to the box volume.

use std::fmt;
use std::path::Path;

use crate::{Error, Result};

/// n observations of (Y ∈ R^J, X ∈ R^d), row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    d: usize,
    n_outcomes: usize,
    /// n×d, row-major: `x[i*d + axis]`.
    x: Vec<f64>,
    /// n×J, row-major: `y[i*n_outcomes + j]`.
    y: Vec<f64>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row-major covariate and outcome buffers.
    ///
    /// Requires n ≥ 1, d ≥ 1, J ≥ 1, and every entry finite. The statistical
    /// entry points (`run_test`, the bandwidth rule) additionally require
    /// n ≥ 2; a single-row dataset is still constructible so that pointwise
    /// estimator identities can be exercised directly.
    pub fn new(x: Vec<f64>, d: usize, y: Vec<f64>, n_outcomes: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidData("covariate dimension d must be ≥ 1".into()));
        }
        if n_outcomes == 0 {
            return Err(Error::InvalidData("number of outcomes J must be ≥ 1".into()));
        }
        if x.len() % d != 0 {
            return Err(Error::InvalidData(format!(
                "covariate buffer length {} is not a multiple of d = {d}",
                x.len()
            )));
        }
        let n = x.len() / d;
        if n == 0 {
            return Err(Error::InvalidData("dataset must contain at least one row".into()));
        }
        if y.len() != n * n_outcomes {
            return Err(Error::InvalidData(format!(
                "outcome buffer has length {}, want n×J = {n}×{n_outcomes} = {}",
                y.len(),
                n * n_outcomes
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at row {}, axis {}",
                i / d,
                i % d
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite outcome at row {}, outcome {}",
                i / n_outcomes,
                i % n_outcomes
            )));
        }
        Ok(Self { n, d, n_outcomes, x, y, column_names: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    /// Covariate row i as a d-slice.
    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn x_value(&self, i: usize, axis: usize) -> f64 {
        self.x[i * self.d + axis]
    }

    #[inline]
    pub fn y_value(&self, i: usize, j: usize) -> f64 {
        self.y[i * self.n_outcomes + j]
    }

    /// Raw row-major covariate buffer (n×d).
    pub fn x_raw(&self) -> &[f64] {
        &self.x
    }

    /// Raw row-major outcome buffer (n×J).
    pub fn y_raw(&self) -> &[f64] {
        &self.y
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Sample standard deviation of one covariate axis (n−1 denominator).
    pub fn sample_sd_axis(&self, axis: usize) -> Result<f64> {
        if axis >= self.d {
            return Err(Error::IndexOutOfRange { index: axis, n_outcomes: self.d });
        }
        if self.n < 2 {
            return Err(Error::InvalidData(
                "sample standard deviation needs at least two rows".into(),
            ));
        }
        let mean = (0..self.n).map(|i| self.x_value(i, axis)).sum::<f64>() / self.n as f64;
        let ss = (0..self.n)
            .map(|i| {
                let c = self.x_value(i, axis) - mean;
                c * c
            })
            .sum::<f64>();
        Ok((ss / (self.n as f64 - 1.0)).sqrt())
    }
}

/// Result of CSV ingestion: the parsed dataset plus the 1-based file line
/// numbers of rows that were dropped for holding a missing, unparsable, or
/// non-finite cell.
#[derive(Debug)]
pub struct CsvIngest {
    pub dataset: Dataset,
    pub skipped_lines: Vec<u64>,
}

/// Reads a dataset from a CSV file.
///
/// The header row must name exactly d covariate columns `x1..xd` and J
/// outcome columns `y1..yJ` (in any order; matching is by name). Rows with a
/// missing, unparsable, or non-finite cell are dropped and reported by line
/// number; a row with the wrong number of fields is a hard error, as is a
/// file whose surviving row count is zero.
pub fn ingest_csv(path: &Path) -> Result<CsvIngest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::InvalidData(format!("cannot read {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidData(format!("missing or unreadable header row: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::InvalidData("missing header row".into()));
    }

    // Map each column position to (is_outcome, 0-based index).
    let mut x_slots: Vec<Option<usize>> = Vec::new();
    let mut y_slots: Vec<Option<usize>> = Vec::new();
    let mut col_kind: Vec<(bool, usize)> = Vec::with_capacity(headers.len());
    for name in headers.iter() {
        let (is_y, idx_str) = if let Some(rest) = name.strip_prefix('x') {
            (false, rest)
        } else if let Some(rest) = name.strip_prefix('y') {
            (true, rest)
        } else {
            return Err(Error::InvalidData(format!(
                "unrecognized column '{name}': expected x1..xd and y1..yJ"
            )));
        };
        let idx: usize = idx_str.parse().map_err(|_| {
            Error::InvalidData(format!(
                "unrecognized column '{name}': expected x1..xd and y1..yJ"
            ))
        })?;
        if idx == 0 {
            return Err(Error::InvalidData(format!(
                "column '{name}' is numbered from 1, not 0"
            )));
        }
        let slots = if is_y { &mut y_slots } else { &mut x_slots };
        if slots.len() < idx {
            slots.resize(idx, None);
        }
        if slots[idx - 1].is_some() {
            return Err(Error::InvalidData(format!("duplicate column '{name}'")));
        }
        slots[idx - 1] = Some(col_kind.len());
        col_kind.push((is_y, idx - 1));
    }
    for (slots, prefix) in [(&x_slots, 'x'), (&y_slots, 'y')] {
        if let Some(gap) = slots.iter().position(Option::is_none) {
            return Err(Error::InvalidData(format!(
                "missing column '{prefix}{}' (columns must be numbered 1..{} with no gaps)",
                gap + 1,
                slots.len()
            )));
        }
    }
    let d = x_slots.len();
    let n_outcomes = y_slots.len();
    if d == 0 {
        return Err(Error::InvalidData("no covariate columns x1..xd in header".into()));
    }
    if n_outcomes == 0 {
        return Err(Error::InvalidData("no outcome columns y1..yJ in header".into()));
    }

    let n_cols = headers.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut skipped_lines = Vec::new();
    let mut row_x = vec![0.0; d];
    let mut row_y = vec![0.0; n_outcomes];
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::InvalidData(format!("malformed CSV record: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != n_cols {
            return Err(Error::InvalidData(format!(
                "ragged row at line {line}: {} fields, header has {n_cols}",
                record.len()
            )));
        }
        let mut ok = true;
        for (c, field) in record.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    let (is_y, idx) = col_kind[c];
                    if is_y {
                        row_y[idx] = v;
                    } else {
                        row_x[idx] = v;
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            x.extend_from_slice(&row_x);
            y.extend_from_slice(&row_y);
        } else {
            skipped_lines.push(line);
        }
    }

    if x.is_empty() {
        return Err(Error::InvalidData(format!(
            "no usable rows in {} ({} rows dropped)",
            path.display(),
            skipped_lines.len()
        )));
    }
    let mut dataset = Dataset::new(x, d, y, n_outcomes)?;
    dataset.column_names = Some(headers.iter().map(str::to_owned).collect());
    Ok(CsvIngest { dataset, skipped_lines })
}

/// Axis-aligned box, the integration domain of the test.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidConfig(format!(
                "domain bounds must be non-empty and of equal dimension (got {} and {})",
                lo.len(),
                hi.len()
            )));
        }
        for (k, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::InvalidConfig(format!(
                    "domain axis {}: need finite lo < hi, got {a}:{b}",
                    k + 1
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// One-dimensional interval [lo, hi].
    pub fn segment(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    /// Parses `"lo:hi"` or `"lo:hi,lo:hi,..."` (one `lo:hi` pair per axis).
    pub fn parse(s: &str) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (k, part) in s.split(',').enumerate() {
            let mut it = part.split(':');
            let (a, b) = match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => (a.trim(), b.trim()),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "domain axis {}: expected lo:hi, got '{part}'",
                        k + 1
                    )))
                }
            };
            let parse = |t: &str| {
                t.parse::<f64>().map_err(|_| {
                    Error::InvalidConfig(format!("domain axis {}: '{t}' is not a number", k + 1))
                })
            };
            lo.push(parse(a)?);
            hi.push(parse(b)?);
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.side(k)).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&a, &b))| v >= a && v <= b)
    }
}

impl serde::Serialize for DomainBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for DomainBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        DomainBox::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for DomainBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.dim() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}:{}", self.lo[k], self.hi[k])?;
        }
        Ok(())
    }
}

/// Smallest distance by which the empirical covariate range extends beyond
/// the domain box, minimized over axes and sides. Negative when some side of
/// the box sticks out past the data entirely. The kernel estimate at a
/// boundary point averages over a window of half-width h/2, so a margin
/// below h/2 signals boundary bias (the domain should sit strictly inside
/// the covariate support).
pub fn support_margin(data: &Dataset, domain: &DomainBox) -> Result<f64> {
    if data.dim() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), got: data.dim() });
    }
    let mut margin = f64::INFINITY;
    for axis in 0..data.dim() {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..data.n() {
            let v = data.x_value(i, axis);
            min = min.min(v);
            max = max.max(v);
        }
        margin = margin.min(domain.lo()[axis] - min).min(max - domain.hi()[axis]);
    }
    Ok(margin)
}

/// Tensor-product midpoint grid over a [`DomainBox`]; cell weights are cell
/// volumes, so they sum to the box volume.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    d: usize,
    /// G×d, row-major; axis 0 varies slowest.
    points: Vec<f64>,
    cell_weights: Vec<f64>,
}

/// Default points per axis: fine in one dimension, coarser when the point
/// count multiplies across axes.
pub fn default_points_per_axis(d: usize) -> usize {
    if d == 1 {
        512
    } else {
        64
    }
}

impl EvalGrid {
    /// Midpoint grid with `per_axis[k]` cells along axis k.
    pub fn midpoint(domain: &DomainBox, per_axis: &[usize]) -> Result<Self> {
        let d = domain.dim();
        if per_axis.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: per_axis.len() });
        }
        if per_axis.iter().any(|&g| g == 0) {
            return Err(Error::InvalidConfig("grid must have ≥ 1 point per axis".into()));
        }
        let total: usize = per_axis.iter().product();
        let cell_volume: f64 = (0..d).map(|k| domain.side(k) / per_axis[k] as f64).product();
        let mut points = Vec::with_capacity(total * d);
        let mut index = vec![0usize; d];
        for _ in 0..total {
            for k in 0..d {
                let step = domain.side(k) / per_axis[k] as f64;
                points.push(domain.lo()[k] + (index[k] as f64 + 0.5) * step);
            }
            // Odometer increment, last axis fastest.
            for k in (0..d).rev() {
                index[k] += 1;
                if index[k] < per_axis[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        Ok(Self { d, points, cell_weights: vec![cell_volume; total] })
    }

    /// Midpoint grid at the default per-axis resolution for the box's
    /// dimension.
    pub fn default_for(domain: &DomainBox) -> Self {
        let g = default_points_per_axis(domain.dim());
        Self::midpoint(domain, &vec![g; domain.dim()]).expect("default grid is always valid")
    }

    pub fn len(&self) -> usize {
        self.cell_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn point(&self, g: usize) -> &[f64] {
        &self.points[g * self.d..(g + 1) * self.d]
    }

    #[inline]
    pub fn cell_weight(&self, g: usize) -> f64 {
        self.cell_weights[g]
    }

    /// ∫ f dx approximated as Σ_g values[g] · cell_weight[g].
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: values.len() });
        }
        Ok(values.iter().zip(&self.cell_weights).map(|(v, w)| v * w).sum())
    }
}
