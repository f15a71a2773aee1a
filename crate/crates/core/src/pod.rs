//! Snapshot proper orthogonal decomposition with regional clipping, traveling
//! wave pair detection, and single-point time-series statistics.
//!
//! The snapshot correlation matrix is `C_mn = (1/M) (L u_m, L u_n)_M` where
//! `L` is a 0/1 indicator mask and `(., .)_M` the mass-weighted L2 product
//! summed over velocity components.

use rayon::prelude::*;

use crate::error::{Result, SemError};
use crate::matrix::Matrix;
use crate::operators::{Field, Space};

/// Relative asymmetry tolerated by [`solve_eigen`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Jacobi sweeps stop once the off-diagonal norm is below this times `|C|`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest are never paired.
pub const PAIR_FLOOR: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Velocity snapshots sampled at a uniform interval on one discretization.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    snapshots: Vec<Vec<Field>>,
    sample_dt: f64,
    mean_removed: bool,
}

impl SnapshotSet {
    pub fn new(space: &Space, snapshots: Vec<Vec<Field>>, sample_dt: f64) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(SemError::SnapshotMismatch("no snapshots".into()));
        }
        for (m, s) in snapshots.iter().enumerate() {
            if s.len() != space.dim() {
                return Err(SemError::SnapshotMismatch(format!(
                    "snapshot {m} has {} components, expected {}",
                    s.len(),
                    space.dim()
                )));
            }
            if let Some(c) = s.iter().find(|c| c.len() != space.len()) {
                return Err(SemError::SnapshotMismatch(format!(
                    "snapshot {m} has {} nodal values, expected {}",
                    c.len(),
                    space.len()
                )));
            }
        }
        Ok(Self {
            snapshots,
            sample_dt,
            mean_removed: false,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Vec<Field>] {
        &self.snapshots
    }

    pub fn sample_dt(&self) -> f64 {
        self.sample_dt
    }

    pub fn mean_removed(&self) -> bool {
        self.mean_removed
    }

    /// Snapshot average, component by component.
    pub fn mean(&self) -> Vec<Field> {
        let m = self.snapshots.len() as f64;
        let mut mean: Vec<Field> = self.snapshots[0]
            .iter()
            .map(|c| Field::from_vec(vec![0.0; c.len()]))
            .collect();
        for s in &self.snapshots {
            for (acc, c) in mean.iter_mut().zip(s) {
                acc.axpy(1.0 / m, c);
            }
        }
        mean
    }

    /// Subtracts the snapshot average from every snapshot and returns it.
    pub fn remove_mean(&mut self) -> Vec<Field> {
        let mean = self.mean();
        for s in self.snapshots.iter_mut() {
            for (c, mc) in s.iter_mut().zip(&mean) {
                c.axpy(-1.0, mc);
            }
        }
        self.mean_removed = true;
        mean
    }
}

/// Axis-aligned box `[lo, hi]` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl ClipBox {
    /// Parses `x0,x1,y0,y1[,z0,z1]`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let v: Vec<f64> = spec
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SemError::Parameter(format!("clip box '{spec}': {e}")))?;
        if v.len() != 2 * dim {
            return Err(SemError::Parameter(format!(
                "clip box '{spec}' needs {} numbers for dim {dim}",
                2 * dim
            )));
        }
        let mut b = ClipBox {
            lo: [f64::NEG_INFINITY; 3],
            hi: [f64::INFINITY; 3],
        };
        for d in 0..dim {
            b.lo[d] = v[2 * d];
            b.hi[d] = v[2 * d + 1];
            if b.lo[d] > b.hi[d] {
                return Err(SemError::Parameter(format!(
                    "clip box '{spec}' has lo > hi on axis {d}"
                )));
            }
        }
        Ok(b)
    }

    fn contains(&self, p: [f64; 3], dim: usize) -> bool {
        let tol = crate::mesh::NODE_TOLERANCE;
        (0..dim).all(|d| p[d] >= self.lo[d] - tol && p[d] <= self.hi[d] + tol)
    }
}

/// Indicator mask restricting the POD inner product to a region.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRegion {
    mask: Vec<f64>,
}

impl ClipRegion {
    /// Accepts only 0/1 values with at least one 1.
    pub fn from_mask(space: &Space, mask: Vec<f64>) -> Result<Self> {
        space.check(&mask)?;
        if let Some(v) = mask.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(SemError::Parameter(format!(
                "clip mask value {v} is not 0 or 1"
            )));
        }
        if !mask.contains(&1.0) {
            return Err(SemError::Parameter("clip mask selects no nodes".into()));
        }
        Ok(Self { mask })
    }

    /// Union of boxes; a node is inside when its coordinates are.
    pub fn from_boxes(space: &Space, boxes: &[ClipBox]) -> Result<Self> {
        let dim = space.dim();
        let mask = (0..space.len())
            .map(|l| {
                let p = space.geometry().point(l);
                if boxes.iter().any(|b| b.contains(p, dim)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_mask(space, mask)
    }

    pub fn full(space: &Space) -> Self {
        Self {
            mask: vec![1.0; space.len()],
        }
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    fn apply(&self, u: &[f64]) -> Field {
        Field::from_vec(u.iter().zip(&self.mask).map(|(a, m)| a * m).collect())
    }
}

fn clipped(set: &SnapshotSet, clip: Option<&ClipRegion>) -> Vec<Vec<Field>> {
    match clip {
        Some(c) => set
            .snapshots
            .iter()
            .map(|s| s.iter().map(|f| c.apply(f)).collect())
            .collect(),
        None => set.snapshots.clone(),
    }
}

fn vector_inner(space: &Space, a: &[Field], b: &[Field]) -> f64 {
    a.iter().zip(b).map(|(x, y)| space.inner(x, y)).sum()
}

/// Snapshot correlation matrix, exactly symmetric.
pub fn build_covariance(
    space: &Space,
    set: &SnapshotSet,
    clip: Option<&ClipRegion>,
) -> Result<Matrix> {
    if let Some(c) = clip {
        space.check(&c.mask)?;
    }
    let m = set.len();
    let snaps = clipped(set, clip);
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| vector_inner(space, &snaps[i], &snaps[j]) / m as f64)
        .collect();
    let mut c = Matrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(values) {
        c[(i, j)] = v;
        c[(j, i)] = v;
    }
    Ok(c)
}

/// Eigenvalues (descending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn frobenius(c: &Matrix) -> f64 {
    c.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
pub fn solve_eigen(c: &Matrix) -> Result<Eigen> {
    let n = c.rows();
    if c.cols() != n {
        return Err(SemError::Dimension {
            expected: n,
            got: c.cols(),
        });
    }
    let norm = frobenius(c);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOLERANCE * norm.max(f64::MIN_POSITIVE) {
        return Err(SemError::NonSymmetric(asym));
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let mut v = Matrix::identity(n);
    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > JACOBI_TOLERANCE * norm {
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(SemError::NonConvergence {
                solver: "cyclic-jacobi",
                iterations: MAX_SWEEPS,
                residual: off(&a) / norm,
                history: Vec::new(),
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = cs * akp - sn * akq;
                    a[(k, q)] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = cs * apk - sn * aqk;
                    a[(q, k)] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cs * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |r, k| v[(r, order[k])]);
    // sign convention: largest entry of each vector positive
    for k in 0..n {
        let mut big = 0;
        for r in 0..n {
            if vectors[(r, k)].abs() > vectors[(big, k)].abs() + 1e-14 {
                big = r;
            }
        }
        if vectors[(big, k)] < 0.0 {
            for r in 0..n {
                vectors[(r, k)] = -vectors[(r, k)];
            }
        }
    }
    Ok(Eigen { values, vectors })
}

/// `sum_n a_n L u_n`, normalized to unit mass norm. Returns the mode and the
/// norm before normalization.
pub fn reconstruct_mode(
    space: &Space,
    set: &SnapshotSet,
    coefficients: &[f64],
    clip: Option<&ClipRegion>,
) -> Result<(Vec<Field>, f64)> {
    if coefficients.len() != set.len() {
        return Err(SemError::Dimension {
            expected: set.len(),
            got: coefficients.len(),
        });
    }
    let mut mode = vec![space.zeros(); space.dim()];
    for (a, s) in coefficients.iter().zip(&set.snapshots) {
        for (acc, c) in mode.iter_mut().zip(s) {
            acc.axpy(*a, c);
        }
    }
    if let Some(c) = clip {
        for f in mode.iter_mut() {
            *f = c.apply(f);
        }
    }
    let norm = vector_inner(space, &mode, &mode).sqrt();
    if !(norm > 0.0) {
        return Err(SemError::Parameter("mode has zero norm".into()));
    }
    for f in mode.iter_mut() {
        f.scale(1.0 / norm);
    }
    Ok((mode, norm))
}

/// Full POD output.
#[derive(Debug, Clone)]
pub struct PodResult {
    pub eigenvalues: Vec<f64>,
    /// Column `i` holds `a_{n,i}`.
    pub coefficients: Matrix,
    /// Leading modes, each paired with `eigenvalues[i]`.
    pub modes: Vec<Vec<Field>>,
}

/// Covariance, eigensolve and the `modes` leading spatial modes.
pub fn pod(
    space: &Space,
    set: &SnapshotSet,
    clip: Option<&ClipRegion>,
    modes: usize,
) -> Result<PodResult> {
    let c = build_covariance(space, set, clip)?;
    let eig = solve_eigen(&c)?;
    let lmax = eig.values.first().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    for i in 0..modes.min(set.len()) {
        if eig.values[i] <= PAIR_FLOOR * lmax {
            break;
        }
        let col: Vec<f64> = (0..set.len()).map(|r| eig.vectors[(r, i)]).collect();
        out.push(reconstruct_mode(space, set, &col, clip)?.0);
    }
    Ok(PodResult {
        eigenvalues: eig.values,
        coefficients: eig.vectors,
        modes: out,
    })
}

/// Greedy pairing of adjacent near-equal eigenvalues (0-based indices).
pub fn detect_mode_pairs(eigenvalues: &[f64], rel_tol: f64) -> Vec<(usize, usize)> {
    let lmax = eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = PAIR_FLOOR * lmax;
    let mut pairs = Vec::new();
    let mut i = 0;
    while i + 1 < eigenvalues.len() {
        let (a, b) = (eigenvalues[i], eigenvalues[i + 1]);
        if a <= floor || b <= floor {
            break;
        }
        if (a - b).abs() <= rel_tol * a {
            pairs.push((i, i + 1));
            i += 2;
        } else {
            i += 1;
        }
    }
    pairs
}

/// Sample autocorrelation about the series mean for lags `0..=max_lag`.
///
/// Each lag is normalized by the energy of the two overlapping segments, so
/// `|rho| <= 1` by Cauchy-Schwarz and the end-of-record bias of the plain
/// estimator (which grows like `lag / len`) is absent.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag < 1 || n <= max_lag {
        return Err(SemError::Parameter(format!(
            "autocorrelation needs 1 <= max_lag < length, got max_lag={max_lag}, length={n}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let a: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let var: f64 = a.iter().map(|x| x * x).sum();
    if negligible(var, n, mean) {
        return Err(SemError::ZeroVariance("autocorrelation"));
    }
    Ok((0..=max_lag)
        .map(|tau| {
            if tau == 0 {
                return 1.0;
            }
            let head = &a[..n - tau];
            let tail = &a[tau..];
            let num: f64 = head.iter().zip(tail).map(|(x, y)| x * y).sum();
            let e1: f64 = head.iter().map(|x| x * x).sum();
            let e2: f64 = tail.iter().map(|x| x * x).sum();
            let den = (e1 * e2).sqrt();
            if den == 0.0 {
                0.0
            } else {
                (num / den).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// A sum of squared deviations that is only round-off of a constant series.
fn negligible(sum_sq: f64, n: usize, mean: f64) -> bool {
    sum_sq <= n as f64 * (1e-14 * mean.abs()).powi(2)
}

/// Central moments of a time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub rms: f64,
    pub skewness: f64,
    /// Non-excess (Gaussian = 3).
    pub kurtosis: f64,
}

pub fn moments(series: &[f64]) -> Result<Moments> {
    let n = series.len();
    if n < 2 {
        return Err(SemError::Parameter(format!(
            "moments need at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if negligible(m2 * nf, n, mean) {
        return Err(SemError::ZeroVariance("moments"));
    }
    Ok(Moments {
        mean,
        rms: m2.sqrt(),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

/// Snapshots of the traveling wave `u = cos(k x - 2 pi m / count)` (other
/// components zero) at `count` uniform phases over one period.
pub fn traveling_wave(space: &Space, wavenumber: f64, count: usize) -> Vec<Vec<Field>> {
    (0..count)
        .map(|m| {
            let phase = 2.0 * std::f64::consts::PI * m as f64 / count as f64;
            let mut s = vec![space.zeros(); space.dim()];
            s[0] = space.interpolate(|p| (wavenumber * p[0] - phase).cos());
            s
        })
        .collect()
}
