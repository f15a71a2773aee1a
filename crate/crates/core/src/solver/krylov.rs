//! Jacobi-preconditioned conjugate gradients on masked Helmholtz operators,
//! and the temporal projection basis used to warm-start pressure solves.

use std::collections::VecDeque;

use crate::error::{Result, SemError};
use crate::operators::{
    apply_consistent_poisson, apply_helmholtz, consistent_poisson_diagonal, stiffness_diagonal,
    Field, Space,
};

/// Default iteration cap for every linear solve.
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

/// Outcome of one iterative solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// Final residual relative to the right-hand side, in the `M^{-1}` norm.
    pub residual: f64,
    /// Residual of the initial guess, same scaling.
    pub initial_residual: f64,
}

/// A symmetric positive (semi-)definite operator acting on continuous fields,
/// with Dirichlet rows removed by a 0/1 mask.
pub trait LinearOperator {
    fn space(&self) -> &Space;
    /// Writes the assembled, masked image of `u` to `out`.
    fn apply(&self, u: &[f64], out: &mut [f64]);
    /// Inverse of the assembled diagonal, zero at masked nodes.
    fn inverse_diagonal(&self) -> &[f64];
    fn mask(&self) -> &[f64];
    /// Constants lie in the kernel.
    fn has_null_space(&self) -> bool;
}

/// The operator `h1 A + h2 M` restricted to nodes where `mask == 1`.
#[derive(Debug, Clone)]
pub struct Helmholtz<'a> {
    space: &'a Space,
    h1: f64,
    h2: f64,
    mask: &'a [f64],
    inv_diag: Vec<f64>,
    null_space: bool,
}

impl<'a> Helmholtz<'a> {
    /// `stiff_diag` is the assembled stiffness diagonal of `space`.
    pub fn new(
        space: &'a Space,
        h1: f64,
        h2: f64,
        mask: &'a [f64],
        stiff_diag: &[f64],
    ) -> Result<Self> {
        if !(h1 >= 0.0 && h2 >= 0.0) || (h1 == 0.0 && h2 == 0.0) {
            return Err(SemError::Parameter(format!(
                "Helmholtz coefficients h1={h1}, h2={h2} must be non-negative and not both zero"
            )));
        }
        space.check(mask)?;
        space.check(stiff_diag)?;
        let inv_diag = stiff_diag
            .iter()
            .zip(space.mass_assembled())
            .zip(mask)
            .map(|((a, m), k)| {
                if *k == 0.0 {
                    0.0
                } else {
                    1.0 / (h1 * a + h2 * m)
                }
            })
            .collect();
        let null_space = h2 == 0.0 && mask.iter().all(|&m| m == 1.0);
        Ok(Self {
            space,
            h1,
            h2,
            mask,
            inv_diag,
            null_space,
        })
    }

    /// Solves `op x = rhs`; see [`pcg`].
    pub fn solve(&self, rhs: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<CgStats> {
        pcg(self, rhs, x, tol, max_iter)
    }
}

impl LinearOperator for Helmholtz<'_> {
    fn space(&self) -> &Space {
        self.space
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        apply_helmholtz(self.space, u, self.h1, self.h2, out);
        for (o, m) in out.iter_mut().zip(self.mask) {
            *o *= m;
        }
    }

    fn inverse_diagonal(&self) -> &[f64] {
        &self.inv_diag
    }

    fn mask(&self) -> &[f64] {
        self.mask
    }

    fn has_null_space(&self) -> bool {
        self.null_space
    }
}

/// Consistent pressure operator `K^T M_v^{-1} K` (see
/// [`apply_consistent_poisson`]), with pressure Dirichlet rows (outflow) given
/// by `pressure_mask` and velocity Dirichlet nodes by `velocity_mask`.
#[derive(Debug, Clone)]
pub struct PressureOperator<'a> {
    space: &'a Space,
    velocity_mask: &'a [f64],
    pressure_mask: &'a [f64],
    inv_diag: Vec<f64>,
    null_space: bool,
}

impl<'a> PressureOperator<'a> {
    pub fn new(
        space: &'a Space,
        velocity_mask: &'a [f64],
        pressure_mask: &'a [f64],
    ) -> Result<Self> {
        let diag = consistent_poisson_diagonal(space, velocity_mask)?;
        Self::with_diagonal(space, velocity_mask, pressure_mask, &diag)
    }

    /// Reuses a diagonal from [`consistent_poisson_diagonal`].
    pub fn with_diagonal(
        space: &'a Space,
        velocity_mask: &'a [f64],
        pressure_mask: &'a [f64],
        diag: &[f64],
    ) -> Result<Self> {
        space.check(pressure_mask)?;
        space.check(diag)?;
        let inv_diag = diag
            .iter()
            .zip(pressure_mask)
            .map(|(a, k)| if *k == 0.0 || *a <= 0.0 { 0.0 } else { 1.0 / a })
            .collect();
        Ok(Self {
            space,
            velocity_mask,
            pressure_mask,
            inv_diag,
            null_space: pressure_mask.iter().all(|&m| m == 1.0),
        })
    }
}

impl LinearOperator for PressureOperator<'_> {
    fn space(&self) -> &Space {
        self.space
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        apply_consistent_poisson(self.space, u, self.velocity_mask, out)
            .expect("length checked at construction");
        for (o, m) in out.iter_mut().zip(self.pressure_mask) {
            *o *= m;
        }
    }

    fn inverse_diagonal(&self) -> &[f64] {
        &self.inv_diag
    }

    fn mask(&self) -> &[f64] {
        self.pressure_mask
    }

    fn has_null_space(&self) -> bool {
        self.null_space
    }
}

/// Removes the component of a dual vector that is incompatible with a
/// singular operator (its pairing with the constant field).
fn make_compatible<O: LinearOperator + ?Sized>(op: &O, r: &mut [f64]) {
    if !op.has_null_space() {
        return;
    }
    let space = op.space();
    let total = space.global_dot(r, &vec![1.0; r.len()]);
    let shift = total / space.volume();
    for (v, m) in r.iter_mut().zip(space.mass_assembled()) {
        *v -= shift * m;
    }
}

fn finish<O: LinearOperator + ?Sized>(op: &O, x: &mut [f64]) {
    if op.has_null_space() {
        let mean = op.space().mean(x);
        x.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Jacobi PCG. `rhs` must already be assembled; masked rows are ignored. `x`
/// holds the initial guess on entry and the solution on exit. Convergence is
/// declared when the residual, measured in the `M^{-1}` norm, falls below
/// `tol` times that of the right-hand side.
pub fn pcg<O: LinearOperator + ?Sized>(
    op: &O,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    pcg_scaled(op, rhs, x, tol, 0.0, max_iter)
}

/// As [`pcg`], but with a positive `scale` residuals are measured relative to
/// that fixed reference instead of `|rhs|`, which makes `tol` an absolute
/// target: a right-hand side already below it (round-off, for instance) is
/// accepted as is.
pub fn pcg_scaled<O: LinearOperator + ?Sized>(
    op: &O,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    scale: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let space = op.space();
    let n = space.len();
    let mask = op.mask();
    let inv_diag = op.inverse_diagonal();
    space.check(rhs)?;
    space.check(x)?;
    let mut b = rhs.to_vec();
    for (v, m) in b.iter_mut().zip(mask) {
        *v *= m;
    }
    make_compatible(op, &mut b);
    for (v, m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
    let bnorm = if scale > 0.0 {
        scale
    } else {
        space.dual_norm(&b)
    };
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            residual: 0.0,
            initial_residual: 0.0,
        });
    }

    let mut w = vec![0.0; n];
    op.apply(x, &mut w);
    let mut r: Vec<f64> = b.iter().zip(&w).map(|(a, c)| a - c).collect();
    make_compatible(op, &mut r);
    let initial = space.dual_norm(&r) / bnorm;
    let mut rel = initial;
    let mut history = vec![rel];
    if rel <= tol {
        finish(op, x);
        return Ok(CgStats {
            iterations: 0,
            residual: rel,
            initial_residual: initial,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = space.global_dot(&r, &z);
    for it in 1..=max_iter {
        op.apply(&p, &mut w);
        let pw = space.global_dot(&p, &w);
        if !(pw > 0.0) {
            return Err(SemError::NonConvergence {
                solver: "jacobi-pcg",
                iterations: it,
                residual: rel,
                history,
            });
        }
        let alpha = rz / pw;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * w[i];
        }
        rel = space.dual_norm(&r) / bnorm;
        history.push(rel);
        if rel <= tol {
            finish(op, x);
            return Ok(CgStats {
                iterations: it,
                residual: rel,
                initial_residual: initial,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = space.global_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SemError::NonConvergence {
        solver: "jacobi-pcg",
        iterations: max_iter,
        residual: rel,
        history,
    })
}

/// Solves `(h1 A + h2 M) u = rhs` with Jacobi PCG, treating nodes with
/// `mask == 0` as Dirichlet nodes whose values come from `boundary`.
///
/// `rhs` is an assembled dual vector; `guess` is a continuous field.
#[allow(clippy::too_many_arguments)]
pub fn helmholtz_solve(
    space: &Space,
    h1: f64,
    h2: f64,
    rhs: &[f64],
    guess: &[f64],
    mask: &[f64],
    boundary: Option<&[f64]>,
    tol: f64,
) -> Result<(Field, CgStats)> {
    let diag = stiffness_diagonal(space);
    helmholtz_solve_with_diag(
        space,
        h1,
        h2,
        rhs,
        guess,
        mask,
        boundary,
        &diag,
        tol,
        DEFAULT_MAX_ITERATIONS,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn helmholtz_solve_with_diag(
    space: &Space,
    h1: f64,
    h2: f64,
    rhs: &[f64],
    guess: &[f64],
    mask: &[f64],
    boundary: Option<&[f64]>,
    stiff_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Field, CgStats)> {
    space.check(rhs)?;
    space.check(guess)?;
    let op = Helmholtz::new(space, h1, h2, mask, stiff_diag)?;
    let mut b = rhs.to_vec();
    let lift: Option<Vec<f64>> = boundary.map(|bc| {
        bc.iter()
            .zip(mask)
            .map(|(v, m)| if *m == 0.0 { *v } else { 0.0 })
            .collect()
    });
    if let Some(ub) = &lift {
        let mut hub = vec![0.0; space.len()];
        apply_helmholtz(space, ub, h1, h2, &mut hub);
        for (v, h) in b.iter_mut().zip(&hub) {
            *v -= h;
        }
    }
    let mut x = guess.to_vec();
    let stats = op.solve(&b, &mut x, tol, max_iter)?;
    if let Some(ub) = lift {
        for (v, u) in x.iter_mut().zip(&ub) {
            *v += u;
        }
    }
    Ok((Field::from_vec(x), stats))
}

/// Previous solutions of `A x = b`, kept `A`-orthonormal, used to build the
/// energy-norm-optimal initial guess for the next solve.
#[derive(Debug, Clone, Default)]
pub struct ProjectionBasis {
    depth: usize,
    vectors: VecDeque<Field>,
    images: VecDeque<Field>,
}

impl ProjectionBasis {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            vectors: VecDeque::with_capacity(depth),
            images: VecDeque::with_capacity(depth),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &Field> {
        self.vectors.iter()
    }

    pub fn clear(&mut self) {
        self.vectors.clear();
        self.images.clear();
    }

    /// `sum_l (x_l . b) x_l`.
    pub fn initial_guess(&self, space: &Space, rhs: &[f64]) -> Field {
        let mut guess = space.zeros();
        for x in &self.vectors {
            guess.axpy(space.global_dot(rhs, x), x);
        }
        guess
    }

    /// Adds a new solution, A-orthogonalized by modified Gram-Schmidt with one
    /// re-orthogonalization pass when the norm drops below `1/sqrt(2)` of its
    /// starting value. The oldest vector is evicted beyond `depth`.
    pub fn update<O: LinearOperator + ?Sized>(&mut self, op: &O, solution: &[f64]) {
        if self.depth == 0 {
            return;
        }
        let space = op.space();
        let mut v = Field::from_vec(solution.to_vec());
        let mut w = space.zeros();
        op.apply(&v, &mut w);
        let norm0 = space.global_dot(&w, &v).max(0.0).sqrt();
        if norm0 == 0.0 {
            return;
        }
        let mut norm = norm0;
        for _pass in 0..2 {
            let before = norm;
            for (x, ax) in self.vectors.iter().zip(&self.images) {
                let c = space.global_dot(&w, x);
                v.axpy(-c, x);
                w.axpy(-c, ax);
            }
            norm = space.global_dot(&w, &v).max(0.0).sqrt();
            if norm >= before / std::f64::consts::SQRT_2 {
                break;
            }
        }
        if norm <= 1e-10 * norm0 {
            return;
        }
        v.scale(1.0 / norm);
        w.scale(1.0 / norm);
        if self.vectors.len() == self.depth {
            self.vectors.pop_front();
            self.images.pop_front();
        }
        self.vectors.push_back(v);
        self.images.push_back(w);
    }
}

/// Pressure solve `op p = rhs` warm-started from a projection basis, which is
/// updated with the new solution afterwards. The result is mean-free when the
/// operator is singular. `scale` is the reference norm of [`pcg_scaled`]
/// (zero for a purely relative tolerance).
pub fn pressure_solve<O: LinearOperator + ?Sized>(
    op: &O,
    rhs: &[f64],
    basis: Option<&mut ProjectionBasis>,
    tol: f64,
    scale: f64,
    max_iter: usize,
) -> Result<(Field, CgStats)> {
    let space = op.space();
    let mut b = rhs.to_vec();
    for (v, m) in b.iter_mut().zip(op.mask()) {
        *v *= m;
    }
    make_compatible(op, &mut b);
    match basis {
        Some(basis) => {
            let mut x = basis.initial_guess(space, &b);
            let stats = pcg_scaled(op, &b, &mut x, tol, scale, max_iter)?;
            basis.update(op, &x);
            Ok((x, stats))
        }
        None => {
            let mut x = vec![0.0; space.len()];
            let stats = pcg_scaled(op, &b, &mut x, tol, scale, max_iter)?;
            Ok((Field::from_vec(x), stats))
        }
    }
}
