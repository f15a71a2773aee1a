//! One-dimensional Gauss-Lobatto-Legendre nodal bases.
//!
//! A [`Basis1D`] of order `N` carries the `N + 1` GLL nodes on `[-1, 1]`, the
//! matching quadrature weights, the Lagrange differentiation matrix and the
//! Legendre Vandermonde matrix used to move between nodal and modal
//! coefficients. Everything multidimensional in the crate is built from these
//! one-dimensional pieces by tensor products.

use crate::error::{check_len, Result, SemError};
use crate::matrix::Matrix;

/// Highest polynomial order accepted by [`Basis1D::new`].
pub const MAX_ORDER: usize = 32;

/// Default number of filtered modes.
pub const DEFAULT_FILTER_CUTOFF: usize = 2;
/// Default filter strength (attenuation of the highest mode).
pub const DEFAULT_FILTER_STRENGTH: f64 = 0.05;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Evaluates `(P_n(x), P_{n-1}(x), P_n'(x))` by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64, f64) {
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    let mut dp_prev = 0.0;
    let mut dp = 1.0;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, p_prev, dp)
}

/// Values `P_0(x), ..., P_n(x)`.
pub fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// GLL basis for a single polynomial order. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis1D {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    diff: Matrix,
    modal: Matrix,
    modal_inv: Matrix,
    bary: Vec<f64>,
}

impl Basis1D {
    /// Builds the GLL basis of the given order.
    ///
    /// Interior nodes are the roots of `P_N'`, found by Newton iteration on
    /// `(1 - x^2) P_N'(x)` from Chebyshev-Gauss-Lobatto starting points.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(SemError::InvalidOrder(order));
        }
        let n = order;
        let nf = n as f64;
        let mut nodes = vec![0.0; n + 1];
        nodes[0] = -1.0;
        nodes[n] = 1.0;
        for (i, node) in nodes.iter_mut().enumerate().take(n).skip(1) {
            let mut x = -(std::f64::consts::PI * i as f64 / nf).cos();
            for _ in 0..NEWTON_MAX_ITER {
                let (p, p_prev, _) = legendre(n, x);
                let dx = (p_prev - x * p) / ((nf + 1.0) * p);
                x += dx;
                if dx.abs() < NEWTON_TOL {
                    break;
                }
            }
            *node = x;
        }
        // exact mirror symmetry
        for i in 0..=n / 2 {
            let j = n - i;
            if i == j {
                nodes[i] = 0.0;
            } else {
                let half = 0.5 * (nodes[j] - nodes[i]);
                nodes[i] = -half;
                nodes[j] = half;
            }
        }

        let p_at: Vec<f64> = nodes.iter().map(|&x| legendre(n, x).0).collect();
        let weights: Vec<f64> = p_at
            .iter()
            .map(|p| 2.0 / (nf * (nf + 1.0) * p * p))
            .collect();

        let mut diff = Matrix::zeros(n + 1, n + 1);
        for i in 0..=n {
            let mut row_sum = 0.0;
            for j in 0..=n {
                if i != j {
                    let d = p_at[i] / (p_at[j] * (nodes[i] - nodes[j]));
                    diff[(i, j)] = d;
                    row_sum += d;
                }
            }
            diff[(i, i)] = -row_sum;
        }

        let modal = Matrix::from_fn(n + 1, n + 1, |i, j| legendre_all(n, nodes[i])[j]);
        // GLL quadrature integrates P_j P_k exactly for j + k <= 2N - 1, so the
        // discrete Legendre basis is orthogonal and V^{-1} = diag(1/gamma) V^T W.
        let gamma: Vec<f64> = (0..=n)
            .map(|j| (0..=n).map(|i| weights[i] * modal[(i, j)].powi(2)).sum())
            .collect();
        let modal_inv = Matrix::from_fn(n + 1, n + 1, |j, i| weights[i] * modal[(i, j)] / gamma[j]);

        let mut bary: Vec<f64> = (0..=n)
            .map(|j| {
                let prod: f64 = (0..=n)
                    .filter(|&k| k != j)
                    .map(|k| nodes[j] - nodes[k])
                    .product();
                1.0 / prod
            })
            .collect();
        let scale = bary.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
        bary.iter_mut().for_each(|b| *b /= scale);

        Ok(Self {
            order,
            nodes,
            weights,
            diff,
            modal,
            modal_inv,
            bary,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `D_ij = h_j'(xi_i)`.
    pub fn diff_matrix(&self) -> &Matrix {
        &self.diff
    }

    /// Legendre Vandermonde matrix, `V_ij = P_j(xi_i)`.
    pub fn modal_matrix(&self) -> &Matrix {
        &self.modal
    }

    pub fn modal_matrix_inverse(&self) -> &Matrix {
        &self.modal_inv
    }

    /// GLL quadrature of nodal samples.
    pub fn quadrature(&self, samples: &[f64]) -> Result<f64> {
        check_len(self.len(), samples.len())?;
        Ok(self.weights.iter().zip(samples).map(|(w, s)| w * s).sum())
    }

    pub fn differentiate(&self, samples: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), samples.len())?;
        Ok(self.diff.mul_vec(samples))
    }

    /// Row `r` holds the Lagrange cardinal functions evaluated at `targets[r]`.
    pub fn interpolation_matrix(&self, targets: &[f64]) -> Result<Matrix> {
        let np = self.len();
        let mut out = Matrix::zeros(targets.len(), np);
        for (r, &t) in targets.iter().enumerate() {
            if !(-1.0..=1.0).contains(&t) || t.is_nan() {
                return Err(SemError::Domain(t));
            }
            if let Some(j) = self.nodes.iter().position(|&x| x == t) {
                out[(r, j)] = 1.0;
                continue;
            }
            let terms: Vec<f64> = (0..np)
                .map(|j| self.bary[j] / (t - self.nodes[j]))
                .collect();
            let denom: f64 = terms.iter().sum();
            for (j, term) in terms.iter().enumerate() {
                out[(r, j)] = term / denom;
            }
        }
        Ok(out)
    }

    /// Per-mode transfer function of the explicit filter: unity up to mode
    /// `N - cutoff`, then a quadratic ramp down to `1 - strength` at mode `N`.
    pub fn filter_transfer(&self, cutoff: usize, strength: f64) -> Result<Vec<f64>> {
        let n = self.order;
        if cutoff == 0 || cutoff > n {
            return Err(SemError::Parameter(format!(
                "filter cutoff {cutoff} must lie in 1..={n}"
            )));
        }
        if !(strength > 0.0 && strength <= 1.0) {
            return Err(SemError::Parameter(format!(
                "filter strength {strength} must lie in (0, 1]"
            )));
        }
        let keep = n - cutoff;
        Ok((0..=n)
            .map(|m| {
                if m <= keep {
                    1.0
                } else {
                    let ramp = (m - keep) as f64 / cutoff as f64;
                    1.0 - strength * ramp * ramp
                }
            })
            .collect())
    }

    /// `F = V diag(sigma) V^{-1}`.
    pub fn modal_filter_matrix(&self, cutoff: usize, strength: f64) -> Result<Matrix> {
        let sigma = self.filter_transfer(cutoff, strength)?;
        let np = self.len();
        let scaled = Matrix::from_fn(np, np, |i, j| self.modal[(i, j)] * sigma[j]);
        Ok(scaled.matmul(&self.modal_inv))
    }
}

/// Gauss-Legendre rule with `points` nodes (used for over-integration).
pub fn gauss_legendre(points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if points == 0 {
        return Err(SemError::Parameter(
            "Gauss rule needs at least one point".into(),
        ));
    }
    let q = points;
    let qf = q as f64;
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, _, d) = legendre(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        let (_, _, d) = legendre(q, x);
        if d.is_finite() {
            dp = d;
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    for i in 0..q / 2 {
        let j = q - 1 - i;
        let half = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -half;
        nodes[j] = half;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    Ok((nodes, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let mut flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                return mid;
            }
            if (fm > 0.0) == (flo > 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn order_one_is_trapezoid() {
        let b = Basis1D::new(1).unwrap();
        assert_eq!(b.nodes(), &[-1.0, 1.0]);
        assert_eq!(b.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn order_two_matches_bisection_oracle() {
        // interior root of (1 - x^2) P_2'(x) = (1 - x^2) 3x, bracketed away from the ends
        let root = bisect(|x| (1.0 - x * x) * 3.0 * x, -0.5, 0.7);
        let b = Basis1D::new(2).unwrap();
        assert!((b.nodes()[1] - root).abs() < 1e-14);
        let expect_w = [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
        for (w, e) in b.weights().iter().zip(expect_w) {
            assert!((w - e).abs() < 1e-14, "{w} vs {e}");
        }
    }

    #[test]
    fn order_seven_clusters_toward_ends() {
        let b = Basis1D::new(7).unwrap();
        let x = b.nodes();
        assert!(x[1] - x[0] < x[4] - x[3]);
    }

    #[test]
    fn rejects_invalid_orders() {
        assert_eq!(Basis1D::new(0), Err(SemError::InvalidOrder(0)));
        assert!(Basis1D::new(MAX_ORDER + 1).is_err());
        assert!(Basis1D::new(MAX_ORDER).is_ok());
    }

    #[test]
    fn type_invariants_hold_up_to_max_order() {
        for n in 1..=MAX_ORDER {
            let b = Basis1D::new(n).unwrap();
            let x = b.nodes();
            assert_eq!(x[0], -1.0);
            assert_eq!(x[n], 1.0);
            for i in 0..n {
                assert!(x[i + 1] > x[i]);
            }
            for i in 0..=n {
                assert!((x[i] + x[n - i]).abs() <= 1e-14);
            }
            assert!(b.weights().iter().all(|&w| w > 0.0));
            assert!(
                (b.weights().iter().sum::<f64>() - 2.0).abs() <= 1e-14,
                "N={n}"
            );
            for i in 0..=n {
                let s: f64 = b.diff_matrix().row(i).iter().sum();
                assert!(s.abs() <= 1e-12, "N={n} row {i} sums to {s}");
            }
            let v = b.modal_matrix();
            for i in 0..=n {
                assert_eq!(v[(i, 0)], 1.0);
                assert!((v[(i, 1)] - x[i]).abs() < 1e-15);
            }
            let eye = v.matmul(b.modal_matrix_inverse());
            assert!(eye.max_abs_diff(&Matrix::identity(n + 1)) < 1e-11, "N={n}");
        }
    }

    #[test]
    fn quadrature_examples() {
        let b = Basis1D::new(2).unwrap();
        let s = |p: i32| b.nodes().iter().map(|x| x.powi(p)).collect::<Vec<_>>();
        assert!(b.quadrature(&s(3)).unwrap().abs() < 1e-15);
        assert!((b.quadrature(&s(2)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // degree 2N = 4 is past exactness; by hand: (1/3)(1) + (4/3)(0) + (1/3)(1)
        let hand = 2.0 / 3.0;
        let q4 = b.quadrature(&s(4)).unwrap();
        assert!((q4 - hand).abs() < 1e-15);
        assert!((q4 - 0.4).abs() > 0.1);
        assert!(b.quadrature(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn differentiation_examples() {
        let b = Basis1D::new(4).unwrap();
        let ones = vec![3.5; 5];
        assert!(b
            .differentiate(&ones)
            .unwrap()
            .iter()
            .all(|d| d.abs() < 1e-12));
        let id = b.differentiate(b.nodes()).unwrap();
        assert!(id.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let sq: Vec<f64> = b.nodes().iter().map(|x| x * x).collect();
        let d = b.differentiate(&sq).unwrap();
        for (di, xi) in d.iter().zip(b.nodes()) {
            assert!((di - 2.0 * xi).abs() < 1e-12);
        }
        assert!(b.differentiate(&[0.0; 3]).is_err());
    }

    #[test]
    fn differentiation_exact_to_degree_n() {
        for n in 1..=12 {
            let b = Basis1D::new(n).unwrap();
            for d in 0..=n as i32 {
                let s: Vec<f64> = b.nodes().iter().map(|x| x.powi(d)).collect();
                let ds = b.differentiate(&s).unwrap();
                for (v, x) in ds.iter().zip(b.nodes()) {
                    let exact = if d == 0 {
                        0.0
                    } else {
                        d as f64 * x.powi(d - 1)
                    };
                    assert!((v - exact).abs() <= 1e-10, "N={n} d={d}");
                }
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let b = Basis1D::new(2).unwrap();
        let m = b.interpolation_matrix(b.nodes()).unwrap();
        assert_eq!(m, Matrix::identity(3));
        let r = b.interpolation_matrix(&[0.0]).unwrap();
        assert_eq!(r.row(0), &[0.0, 1.0, 0.0]);
        let b1 = Basis1D::new(1).unwrap();
        let r = b1.interpolation_matrix(&[0.5]).unwrap();
        assert!((r[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((r[(0, 1)] - 0.75).abs() < 1e-15);
        assert_eq!(b.interpolation_matrix(&[1.5]), Err(SemError::Domain(1.5)));
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let b = Basis1D::new(9).unwrap();
        let targets: Vec<f64> = (0..17)
            .map(|i| -1.0 + i as f64 / 8.0 + 1e-3 * (i % 3) as f64)
            .map(|t: f64| t.clamp(-1.0, 1.0))
            .collect();
        let m = b.interpolation_matrix(&targets).unwrap();
        let f = |x: f64| 1.0 - 2.0 * x + x.powi(5) - 0.3 * x.powi(9);
        let s: Vec<f64> = b.nodes().iter().map(|&x| f(x)).collect();
        let vals = m.mul_vec(&s);
        for (r, (v, t)) in vals.iter().zip(&targets).enumerate() {
            assert!((v - f(*t)).abs() < 1e-12);
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_examples() {
        let b = Basis1D::new(6).unwrap();
        let f = b.modal_filter_matrix(2, 0.3).unwrap();
        let c = f.mul_vec(&[2.0; 7]);
        assert!(c.iter().all(|v| (v - 2.0).abs() < 1e-13));

        let f1 = b.modal_filter_matrix(1, 1.0).unwrap();
        let top: Vec<f64> = b.nodes().iter().map(|&x| legendre(6, x).0).collect();
        assert!(f1.mul_vec(&top).iter().all(|v| v.abs() < 1e-12));

        let ff = f.matmul(&f);
        assert!(ff.max_abs_diff(&f) > 1e-3);

        assert!(b.modal_filter_matrix(0, 0.5).is_err());
        assert!(b.modal_filter_matrix(7, 0.5).is_err());
        assert!(b.modal_filter_matrix(2, 0.0).is_err());
        assert!(b.modal_filter_matrix(2, 1.5).is_err());
    }

    #[test]
    fn filter_spectral_selectivity() {
        for n in 2..=12 {
            let b = Basis1D::new(n).unwrap();
            for k in 1..=n {
                let alpha = 0.37;
                let f = b.modal_filter_matrix(k, alpha).unwrap();
                for m in 0..=n {
                    let mode: Vec<f64> = b.nodes().iter().map(|&x| legendre_all(n, x)[m]).collect();
                    let out = f.mul_vec(&mode);
                    let scale = if m <= n - k {
                        1.0
                    } else if m == n {
                        1.0 - alpha
                    } else {
                        continue;
                    };
                    for (o, v) in out.iter().zip(&mode) {
                        assert!((o - scale * v).abs() <= 1e-12, "N={n} k={k} m={m}");
                    }
                }
            }
        }
    }

    #[test]
    fn gauss_rule_is_exact_to_2q_minus_1() {
        for q in 1..=20 {
            let (x, w) = gauss_legendre(q).unwrap();
            for d in 0..(2 * q) as i32 {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d)).sum();
                let exact = if d % 2 == 1 {
                    0.0
                } else {
                    2.0 / (d as f64 + 1.0)
                };
                assert!((s - exact).abs() < 1e-13, "q={q} d={d}");
            }
        }
    }
}
