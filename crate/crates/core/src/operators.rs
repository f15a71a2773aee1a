//! Matrix-free spectral element operators.
//!
//! Fields live in element-local storage (`E * (N+1)^dim` values, element
//! major, x-fastest inside an element). A field is *continuous* when every
//! local copy of a global node holds the same value. Operators that produce
//! weak-form (dual) vectors return them already direct-stiffness-summed, so
//! their local copies agree as well; [`Space::global_dot`] pairs a dual vector
//! with a continuous one.
//!
//! Only 1-D matrices are ever stored; every multidimensional application is a
//! sequence of sweeps along one reference axis at a time.

use std::ops::{Deref, DerefMut};

use rayon::prelude::*;

use crate::basis::{gauss_legendre, Basis1D};
use crate::error::{check_len, Result, SemError};
use crate::matrix::Matrix;
use crate::mesh::{BoundaryKind, GatherScatter, GeometricFactors, Mesh};
use crate::tensor::{apply_all_axes, apply_axis, cube_shape, unflatten};

/// Elements handed to one rayon task at a time.
const ELEMENTS_PER_TASK: usize = 4;

/// Nodal values of one scalar unknown in element-local storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) {
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.0.iter_mut().for_each(|v| *v *= a);
    }

    pub fn fill(&mut self, v: f64) {
        self.0.iter_mut().for_each(|x| *x = v);
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A discretized domain: mesh, basis, geometry and assembly data.
#[derive(Debug, Clone)]
pub struct Space {
    mesh: Mesh,
    basis: Basis1D,
    geom: GeometricFactors,
    gs: GatherScatter,
    dim: usize,
    npe: usize,
    diff_t: Matrix,
    /// Local mass `w_tensor * J`.
    mass: Vec<f64>,
    /// Direct-stiffness-summed mass; reciprocal below.
    mass_assembled: Vec<f64>,
    inv_mass_assembled: Vec<f64>,
    /// `G[ij] = w J sum_k (d xi_i/d x_k)(d xi_j/d x_k)` for `i <= j`.
    stiff_geom: Vec<Vec<f64>>,
    /// Physical node spacing along each reference axis.
    spacing: Vec<Vec<f64>>,
    fine: FineGrid,
}

/// Over-integration (dealiasing) grid of Gauss points.
#[derive(Debug, Clone)]
struct FineGrid {
    points: usize,
    interp: Matrix,
    interp_t: Matrix,
    /// `w_fine * J` at every fine point of every element.
    mass: Vec<f64>,
}

fn sym_index(i: usize, j: usize, dim: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    // row-major upper triangle
    a * dim - a * (a + 1) / 2 + b
}

impl Space {
    pub fn new(mesh: Mesh, basis: Basis1D) -> Result<Self> {
        let geom = GeometricFactors::compute(&mesh, &basis)?;
        let gs = GatherScatter::build(&mesh, &basis);
        let dim = mesh.dim();
        let np = basis.len();
        let npe = np.pow(dim as u32);
        let nl = gs.num_local();
        let w = basis.weights();

        let mass: Vec<f64> = (0..nl)
            .map(|l| {
                let ijk = unflatten(l % npe, np);
                let wt: f64 = (0..dim).map(|d| w[ijk[d]]).product();
                wt * geom.jacobian()[l]
            })
            .collect();
        let mut mass_assembled = mass.clone();
        gs.dssum(&mut mass_assembled);
        let inv_mass_assembled = mass_assembled.iter().map(|m| 1.0 / m).collect();

        let mut stiff_geom = vec![vec![0.0; nl]; dim * (dim + 1) / 2];
        for i in 0..dim {
            for j in i..dim {
                let g = &mut stiff_geom[sym_index(i, j, dim)];
                for l in 0..nl {
                    let mut s = 0.0;
                    for k in 0..dim {
                        s += geom.metric(i, k)[l] * geom.metric(j, k)[l];
                    }
                    g[l] = mass[l] * s;
                }
            }
        }

        let mut spacing = vec![vec![0.0; nl]; dim];
        let mut strides = [1usize; 3];
        for d in 1..3 {
            strides[d] = strides[d - 1] * np;
        }
        for (a, sp) in spacing.iter_mut().enumerate() {
            for l in 0..nl {
                let ijk = unflatten(l % npe, np);
                let p = geom.point(l);
                let dist = |other: usize| -> f64 {
                    let q = geom.point(other);
                    (0..dim).map(|d| (p[d] - q[d]).powi(2)).sum::<f64>().sqrt()
                };
                let mut h = f64::INFINITY;
                if ijk[a] > 0 {
                    h = h.min(dist(l - strides[a]));
                }
                if ijk[a] + 1 < np {
                    h = h.min(dist(l + strides[a]));
                }
                sp[l] = h;
            }
        }

        let q = (3 * np).div_ceil(2);
        let (gx, gw) = gauss_legendre(q)?;
        let interp = basis.interpolation_matrix(&gx)?;
        let interp_t = interp.transpose();
        let nq = q.pow(dim as u32);
        let mut fine_mass = Vec::with_capacity(mesh.num_elements() * nq);
        let (mut work, mut out) = (Vec::new(), Vec::new());
        for e in 0..mesh.num_elements() {
            apply_all_axes(
                &interp,
                &geom.jacobian()[e * npe..(e + 1) * npe],
                dim,
                &mut work,
                &mut out,
            );
            for (l, jac) in out.iter().enumerate() {
                let ijk = unflatten(l, q);
                let wt: f64 = (0..dim).map(|d| gw[ijk[d]]).product();
                fine_mass.push(wt * jac);
            }
        }

        Ok(Self {
            diff_t: basis.diff_matrix().transpose(),
            mesh,
            basis,
            geom,
            gs,
            dim,
            npe,
            mass,
            mass_assembled,
            inv_mass_assembled,
            stiff_geom,
            spacing,
            fine: FineGrid {
                points: q,
                interp,
                interp_t,
                mass: fine_mass,
            },
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn basis(&self) -> &Basis1D {
        &self.basis
    }

    pub fn geometry(&self) -> &GeometricFactors {
        &self.geom
    }

    pub fn gather_scatter(&self) -> &GatherScatter {
        &self.gs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.basis.order()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.npe
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// Length of element-local storage.
    pub fn len(&self) -> usize {
        self.gs.num_local()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Local (unassembled) diagonal mass.
    pub fn mass_local(&self) -> &[f64] {
        &self.mass
    }

    /// Assembled diagonal mass at every local copy.
    pub fn mass_assembled(&self) -> &[f64] {
        &self.mass_assembled
    }

    pub fn inverse_mass(&self) -> &[f64] {
        &self.inv_mass_assembled
    }

    /// Physical node spacing along reference axis `axis`.
    pub fn spacing(&self, axis: usize) -> &[f64] {
        &self.spacing[axis]
    }

    /// Number of Gauss points per direction used for over-integration.
    pub fn dealias_points(&self) -> usize {
        self.fine.points
    }

    pub fn zeros(&self) -> Field {
        Field(vec![0.0; self.len()])
    }

    /// Nodal interpolant of `f` evaluated at physical node coordinates.
    pub fn interpolate(&self, f: impl Fn([f64; 3]) -> f64) -> Field {
        Field((0..self.len()).map(|l| f(self.geom.point(l))).collect())
    }

    pub fn check(&self, u: &[f64]) -> Result<()> {
        check_len(self.len(), u.len())
    }

    fn check_vector(&self, u: &[Field]) -> Result<()> {
        check_len(self.dim, u.len())?;
        u.iter().try_for_each(|c| self.check(c))
    }

    pub fn dssum(&self, u: &mut [f64]) {
        self.gs.dssum(u);
    }

    /// Mass inner product of two continuous fields.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass
            .iter()
            .zip(u)
            .zip(v)
            .map(|((m, a), b)| m * a * b)
            .sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Mass-weighted mean of a continuous field.
    pub fn mean(&self, u: &[f64]) -> f64 {
        self.mass.iter().zip(u).map(|(m, a)| m * a).sum::<f64>() / self.volume()
    }

    /// Global Euclidean pairing of assembled (or continuous) local vectors:
    /// every global node is counted once.
    pub fn global_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.gs
            .inverse_multiplicity()
            .iter()
            .zip(a)
            .zip(b)
            .map(|((w, x), y)| w * x * y)
            .sum()
    }

    /// `sqrt(r^T M^{-1} r)` for an assembled dual vector.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        self.gs
            .inverse_multiplicity()
            .iter()
            .zip(&self.inv_mass_assembled)
            .zip(r)
            .map(|((w, mi), x)| w * mi * x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Mass-weighted average of local copies: the mass-orthogonal projection
    /// of a discontinuous field onto the continuous space.
    pub fn project(&self, u: &mut [f64]) {
        for (v, m) in u.iter_mut().zip(&self.mass) {
            *v *= m;
        }
        self.gs.dssum(u);
        for (v, mi) in u.iter_mut().zip(&self.inv_mass_assembled) {
            *v *= mi;
        }
    }

    /// Converts an assembled dual vector to a continuous field, `M^{-1} r`.
    pub fn dual_to_field(&self, r: &mut [f64]) {
        for (v, mi) in r.iter_mut().zip(&self.inv_mass_assembled) {
            *v *= mi;
        }
    }

    /// 0/1 mask, zero at every global node touching a side whose kind is in
    /// `masked`.
    pub fn boundary_mask(&self, sides: &[BoundaryKind], masked: &[BoundaryKind]) -> Vec<f64> {
        let mut hits = vec![0.0; self.len()];
        for f in self.geom.boundary_faces() {
            if masked.contains(&sides[f.side]) {
                for &l in &f.nodes {
                    hits[f.element * self.npe + l] = 1.0;
                }
            }
        }
        self.gs.dssum(&mut hits);
        hits.iter()
            .map(|&h| if h > 0.0 { 0.0 } else { 1.0 })
            .collect()
    }

    /// Value of a continuous field at a physical point.
    pub fn evaluate(&self, u: &[f64], point: &[f64]) -> Option<f64> {
        let (e, xi) = self.mesh.locate(point)?;
        let rows = crate::mesh::point_interpolation(&self.basis, &xi, self.dim).ok()?;
        let np = self.basis.len();
        let block = &u[e * self.npe..(e + 1) * self.npe];
        let mut s = 0.0;
        for (l, v) in block.iter().enumerate() {
            let ijk = unflatten(l, np);
            let w: f64 = (0..self.dim).map(|d| rows[d][ijk[d]]).product();
            s += w * v;
        }
        Some(s)
    }

    fn shape(&self) -> [usize; 3] {
        cube_shape(self.basis.len(), self.dim)
    }
}

struct Scratch {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(n: usize, count: usize) -> Self {
        Self {
            a: vec![vec![0.0; n]; count],
            b: vec![vec![0.0; n]; count],
        }
    }
}

fn par_elements<F>(out: &mut [f64], npe: usize, scratch: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut Scratch) + Sync,
{
    out.par_chunks_mut(npe)
        .with_min_len(ELEMENTS_PER_TASK)
        .enumerate()
        .for_each_init(
            || Scratch::new(npe, scratch),
            |s, (e, block)| f(e, block, s),
        );
}

/// `M u`: pointwise diagonal mass, then direct stiffness summation.
pub fn apply_mass(space: &Space, u: &[f64]) -> Result<Field> {
    space.check(u)?;
    let mut out: Vec<f64> = u.iter().zip(&space.mass).map(|(a, m)| a * m).collect();
    space.dssum(&mut out);
    Ok(Field(out))
}

fn stiffness_local(space: &Space, u: &[f64], out: &mut [f64]) {
    let dim = space.dim;
    let npe = space.npe;
    let shape = space.shape();
    let d = space.basis.diff_matrix();
    let dt = &space.diff_t;
    par_elements(out, npe, dim, |e, block, s| {
        let ue = &u[e * npe..(e + 1) * npe];
        let off = e * npe;
        for i in 0..dim {
            apply_axis(d, ue, shape, i, &mut s.a[i]);
        }
        for l in 0..npe {
            let mut r = [0.0; 3];
            for (i, ri) in r.iter_mut().enumerate().take(dim) {
                for j in 0..dim {
                    *ri += space.stiff_geom[sym_index(i, j, dim)][off + l] * s.a[j][l];
                }
            }
            for i in 0..dim {
                s.b[i][l] = r[i];
            }
        }
        block.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..dim {
            apply_axis(dt, &s.b[i], shape, i, &mut s.a[i]);
            for (o, v) in block.iter_mut().zip(&s.a[i]) {
                *o += v;
            }
        }
    });
}

/// `A u` with `(A u, v) = int grad u . grad v` under GLL quadrature.
pub fn apply_stiffness(space: &Space, u: &[f64]) -> Result<Field> {
    space.check(u)?;
    let mut out = vec![0.0; space.len()];
    stiffness_local(space, u, &mut out);
    space.dssum(&mut out);
    Ok(Field(out))
}

/// `(h1 A + h2 M) u`, assembled.
pub fn apply_helmholtz(space: &Space, u: &[f64], h1: f64, h2: f64, out: &mut [f64]) {
    if h1 != 0.0 {
        stiffness_local(space, u, out);
        out.iter_mut().for_each(|v| *v *= h1);
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    if h2 != 0.0 {
        for ((o, a), m) in out.iter_mut().zip(u).zip(&space.mass) {
            *o += h2 * m * a;
        }
    }
    space.dssum(out);
}

/// Assembled diagonal of the stiffness matrix.
pub fn stiffness_diagonal(space: &Space) -> Field {
    let dim = space.dim;
    let np = space.basis.len();
    let npe = space.npe;
    let d = space.basis.diff_matrix();
    let mut out = vec![0.0; space.len()];
    let mut strides = [1usize; 3];
    for a in 1..3 {
        strides[a] = strides[a - 1] * np;
    }
    for e in 0..space.num_elements() {
        let off = e * npe;
        for l in 0..npe {
            let ijk = unflatten(l, np);
            let mut v = 0.0;
            for i in 0..dim {
                let g = &space.stiff_geom[sym_index(i, i, dim)];
                let line_start = l - ijk[i] * strides[i];
                for p in 0..np {
                    let m = line_start + p * strides[i];
                    v += g[off + m] * d[(p, ijk[i])].powi(2);
                }
                for j in i + 1..dim {
                    let g = &space.stiff_geom[sym_index(i, j, dim)];
                    v += 2.0 * g[off + l] * d[(ijk[i], ijk[i])] * d[(ijk[j], ijk[j])];
                }
            }
            out[off + l] = v;
        }
    }
    space.dssum(&mut out);
    Field(out)
}

/// Elementwise physical gradient (discontinuous across element faces).
pub fn gradient_local(space: &Space, u: &[f64]) -> Result<Vec<Field>> {
    space.check(u)?;
    let dim = space.dim;
    let npe = space.npe;
    let shape = space.shape();
    let d = space.basis.diff_matrix();
    let mut out = vec![vec![0.0; space.len()]; dim];
    let mut r = vec![vec![0.0; npe]; dim];
    for e in 0..space.num_elements() {
        let off = e * npe;
        let ue = &u[off..off + npe];
        for (i, ri) in r.iter_mut().enumerate() {
            apply_axis(d, ue, shape, i, ri);
        }
        for (k, ok) in out.iter_mut().enumerate() {
            for l in 0..npe {
                let mut s = 0.0;
                for (i, ri) in r.iter().enumerate() {
                    s += space.geom.metric(i, k)[off + l] * ri[l];
                }
                ok[off + l] = s;
            }
        }
    }
    Ok(out.into_iter().map(Field).collect())
}

/// Continuous gradient: the elementwise gradient projected (mass-weighted
/// average) onto the continuous space.
pub fn apply_gradient(space: &Space, u: &[f64]) -> Result<Vec<Field>> {
    let mut g = gradient_local(space, u)?;
    for c in g.iter_mut() {
        space.project(c);
    }
    Ok(g)
}

/// Assembled dual vector `q -> int grad q . f dV`.
pub fn weak_gradient_transpose(space: &Space, f: &[Field]) -> Result<Field> {
    space.check_vector(f)?;
    let dim = space.dim;
    let npe = space.npe;
    let shape = space.shape();
    let dt = &space.diff_t;
    let mut out = vec![0.0; space.len()];
    par_elements(&mut out, npe, dim, |e, block, s| {
        let off = e * npe;
        for i in 0..dim {
            for l in 0..npe {
                let mut v = 0.0;
                for (k, fk) in f.iter().enumerate() {
                    v += space.geom.metric(i, k)[off + l] * fk[off + l];
                }
                s.b[i][l] = space.mass[off + l] * v;
            }
        }
        block.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..dim {
            apply_axis(dt, &s.b[i], shape, i, &mut s.a[i]);
            for (o, v) in block.iter_mut().zip(&s.a[i]) {
                *o += v;
            }
        }
    });
    space.dssum(&mut out);
    Ok(Field(out))
}

/// Assembled dual vector `q -> oint q f.n dS` over boundary faces whose side
/// satisfies `include`.
pub fn boundary_flux(space: &Space, f: &[Field], include: impl Fn(usize) -> bool) -> Result<Field> {
    space.check_vector(f)?;
    let mut out = vec![0.0; space.len()];
    for face in space.geom.boundary_faces() {
        if !include(face.side) {
            continue;
        }
        let off = face.element * space.npe;
        for ((&l, w), n) in face.nodes.iter().zip(&face.weights).zip(&face.normals) {
            let mut un = 0.0;
            for (k, fk) in f.iter().enumerate() {
                un += fk[off + l] * n[k];
            }
            out[off + l] += w * un;
        }
    }
    space.dssum(&mut out);
    Ok(Field(out))
}

/// Divergence in weak form, `M^{-1} (-G^T M u + oint q u.n)`. It is the
/// negative mass-adjoint of [`apply_gradient`] on periodic domains and agrees
/// with the pointwise divergence whenever GLL quadrature is exact.
pub fn apply_divergence(space: &Space, u: &[Field]) -> Result<Field> {
    let mut out = weak_gradient_transpose(space, u)?;
    out.scale(-1.0);
    let flux = boundary_flux(space, u, |_| true)?;
    out.axpy(1.0, &flux);
    space.dual_to_field(&mut out);
    Ok(out)
}

/// Consistent Poisson operator `E p = K^T (mask M^{-1} K p)`, where `K p`
/// pairs the gradient of `p` with every test function and `mask` zeroes
/// Dirichlet velocity nodes. `E` is the discrete `-div grad` that maps a
/// pressure increment to the divergence it removes, so a velocity corrected
/// by `M^{-1} K p` is discretely solenoidal once `E p` matches its divergence.
pub fn apply_consistent_poisson(
    space: &Space,
    p: &[f64],
    velocity_mask: &[f64],
    out: &mut [f64],
) -> Result<()> {
    space.check(out)?;
    let mut g = apply_gradient(space, p)?;
    for c in g.iter_mut() {
        for (v, m) in c.iter_mut().zip(velocity_mask) {
            *v *= m;
        }
    }
    let w = weak_gradient_transpose(space, &g)?;
    out.copy_from_slice(&w);
    Ok(())
}

/// Exact assembled diagonal of the consistent Poisson operator.
pub fn consistent_poisson_diagonal(space: &Space, velocity_mask: &[f64]) -> Result<Field> {
    space.check(velocity_mask)?;
    let dim = space.dim;
    let np = space.basis.len();
    let npe = space.npe;
    let d = space.basis.diff_matrix();
    let ids = space.gs.global_ids();
    let mut strides = [1usize; 3];
    for a in 1..3 {
        strides[a] = strides[a - 1] * np;
    }
    let mut copies: Vec<Vec<usize>> = vec![Vec::new(); space.gs.num_global()];
    for (l, &g) in ids.iter().enumerate() {
        copies[g].push(l);
    }
    // representative local copy of every global node
    let mut rep = vec![usize::MAX; space.gs.num_global()];
    for (l, &g) in ids.iter().enumerate() {
        if rep[g] == usize::MAX {
            rep[g] = l;
        }
    }
    let mut diag_global = vec![0.0; space.gs.num_global()];
    let mut column: std::collections::BTreeMap<usize, [f64; 3]> = std::collections::BTreeMap::new();
    for (gi, locals) in copies.iter().enumerate() {
        column.clear();
        for &l in locals {
            let e = l / npe;
            let off = e * npe;
            let a = l % npe;
            let ijk = unflatten(a, np);
            for r in 0..dim {
                let line_start = a - ijk[r] * strides[r];
                for q in 0..np {
                    let b = line_start + q * strides[r];
                    let dr = d[(q, ijk[r])];
                    if dr == 0.0 {
                        continue;
                    }
                    let entry = column.entry(ids[off + b]).or_insert([0.0; 3]);
                    for (k, ek) in entry.iter_mut().enumerate().take(dim) {
                        *ek += space.mass[off + b] * space.geom.metric(r, k)[off + b] * dr;
                    }
                }
            }
        }
        let mut v = 0.0;
        for (&gj, k) in &column {
            let lj = rep[gj];
            let c = velocity_mask[lj] * space.inv_mass_assembled[lj];
            v += c * k[..dim].iter().map(|x| x * x).sum::<f64>();
        }
        diag_global[gi] = v;
    }
    Ok(Field(ids.iter().map(|&g| diag_global[g]).collect()))
}

/// Assembled weak convection `q -> int q (u . grad) theta`.
pub fn convection_weak(
    space: &Space,
    velocity: &[Field],
    theta: &[f64],
    dealias: bool,
) -> Result<Field> {
    space.check_vector(velocity)?;
    space.check(theta)?;
    let dim = space.dim;
    let npe = space.npe;
    let grad = gradient_local(space, theta)?;
    let mut out = vec![0.0; space.len()];
    if !dealias {
        for (l, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..dim {
                s += velocity[k][l] * grad[k][l];
            }
            *o = space.mass[l] * s;
        }
    } else {
        let fine = &space.fine;
        let nq = fine.points.pow(dim as u32);
        out.par_chunks_mut(npe)
            .with_min_len(ELEMENTS_PER_TASK)
            .enumerate()
            .for_each_init(
                || (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
                |(work, ufine, gfine, prod), (e, block)| {
                    let off = e * npe;
                    prod.clear();
                    prod.resize(nq, 0.0);
                    for k in 0..dim {
                        apply_all_axes(
                            &fine.interp,
                            &velocity[k][off..off + npe],
                            dim,
                            work,
                            ufine,
                        );
                        apply_all_axes(&fine.interp, &grad[k][off..off + npe], dim, work, gfine);
                        for ((p, a), b) in prod.iter_mut().zip(ufine.iter()).zip(gfine.iter()) {
                            *p += a * b;
                        }
                    }
                    for (p, m) in prod.iter_mut().zip(&fine.mass[e * nq..(e + 1) * nq]) {
                        *p *= m;
                    }
                    apply_all_axes(&fine.interp_t, prod, dim, work, ufine);
                    block.copy_from_slice(ufine);
                },
            );
    }
    space.dssum(&mut out);
    Ok(Field(out))
}

/// Convective derivative `(u . grad) theta` as a continuous field.
pub fn apply_convection(
    space: &Space,
    velocity: &[Field],
    theta: &[f64],
    dealias: bool,
) -> Result<Field> {
    let mut out = convection_weak(space, velocity, theta, dealias)?;
    space.dual_to_field(&mut out);
    Ok(out)
}

/// Explicit modal filter applied per element along each axis, then
/// re-assembled by mass-weighted averaging.
pub fn apply_filter(space: &Space, u: &[f64], cutoff: usize, strength: f64) -> Result<Field> {
    space.check(u)?;
    let f = space.basis.modal_filter_matrix(cutoff, strength)?;
    Ok(filter_with(space, u, &f))
}

pub(crate) fn filter_with(space: &Space, u: &[f64], f: &Matrix) -> Field {
    let npe = space.npe;
    let dim = space.dim;
    let mut out = vec![0.0; space.len()];
    out.par_chunks_mut(npe)
        .with_min_len(ELEMENTS_PER_TASK)
        .enumerate()
        .for_each_init(
            || (Vec::new(), Vec::new()),
            |(work, res), (e, block)| {
                apply_all_axes(f, &u[e * npe..(e + 1) * npe], dim, work, res);
                block.copy_from_slice(res);
            },
        );
    space.project(&mut out);
    Field(out)
}

/// Curl of a continuous vector field, projected to the continuous space.
/// Returns one component in 2-D (the out-of-plane vorticity), three in 3-D.
pub fn apply_curl(space: &Space, u: &[Field]) -> Result<Vec<Field>> {
    space.check_vector(u)?;
    let grads: Vec<Vec<Field>> = u
        .iter()
        .map(|c| gradient_local(space, c))
        .collect::<Result<_>>()?;
    let mut out = if space.dim == 2 {
        let mut w = grads[1][0].clone();
        w.axpy(-1.0, &grads[0][1]);
        vec![w]
    } else {
        let comp = |a: usize, b: usize, c: usize, d: usize| {
            let mut w = grads[a][b].clone();
            w.axpy(-1.0, &grads[c][d]);
            w
        };
        vec![comp(2, 1, 1, 2), comp(0, 2, 2, 0), comp(1, 0, 0, 1)]
    };
    for c in out.iter_mut() {
        space.project(c);
    }
    Ok(out)
}

/// Elementwise `curl curl u`; the inner curl is projected to the continuous
/// space before the outer one is taken.
pub fn curl_curl_local(space: &Space, u: &[Field]) -> Result<Vec<Field>> {
    let omega = apply_curl(space, u)?;
    if space.dim == 2 {
        let g = gradient_local(space, &omega[0])?;
        let mut neg = g[0].clone();
        neg.scale(-1.0);
        Ok(vec![g[1].clone(), neg])
    } else {
        let grads: Vec<Vec<Field>> = omega
            .iter()
            .map(|c| gradient_local(space, c))
            .collect::<Result<_>>()?;
        let comp = |a: usize, b: usize, c: usize, d: usize| {
            let mut w = grads[a][b].clone();
            w.axpy(-1.0, &grads[c][d]);
            w
        };
        Ok(vec![comp(2, 1, 1, 2), comp(0, 2, 2, 0), comp(1, 0, 0, 1)])
    }
}

/// Rejects vector fields whose component count does not match the space.
pub fn check_components(space: &Space, u: &[Field]) -> Result<()> {
    if u.len() != space.dim {
        return Err(SemError::Dimension {
            expected: space.dim,
            got: u.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::legendre;
    use crate::mesh::BoxMesh;

    fn square(n: usize, cx: usize, cy: usize, periodic: bool) -> Space {
        let mesh = BoxMesh::new(2, &[cx, cy], &[[0.0, 1.0], [0.0, 1.0]])
            .periodic(0, periodic)
            .periodic(1, periodic)
            .build()
            .unwrap();
        Space::new(mesh, Basis1D::new(n).unwrap()).unwrap()
    }

    fn global_sum(space: &Space, dual: &[f64]) -> f64 {
        space.global_dot(dual, &vec![1.0; dual.len()])
    }

    fn random_continuous(space: &Space, seed: u64) -> Field {
        let gs = space.gather_scatter();
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let global: Vec<f64> = (0..gs.num_global())
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Field::from_vec(gs.scatter(&global))
    }

    #[test]
    fn mass_examples() {
        let s = square(4, 2, 3, false);
        let one = s.interpolate(|_| 1.0);
        assert!((global_sum(&s, &apply_mass(&s, &one).unwrap()) - 1.0).abs() < 1e-13);
        let x = s.interpolate(|p| p[0]);
        assert!((global_sum(&s, &apply_mass(&s, &x).unwrap()) - 0.5).abs() < 1e-13);

        let gs = s.gather_scatter();
        let target = gs.global_ids()[s.nodes_per_element() + 7];
        let mut ind = vec![0.0; gs.num_global()];
        ind[target] = 1.0;
        let out = apply_mass(&s, &gs.scatter(&ind)).unwrap();
        for (l, &g) in gs.global_ids().iter().enumerate() {
            assert_eq!(out[l] != 0.0, g == target);
        }
        assert!(apply_mass(&s, &[1.0; 3]).is_err());
    }

    #[test]
    fn stiffness_examples() {
        let s = square(5, 2, 2, false);
        let c = s.interpolate(|_| 2.5);
        assert!(apply_stiffness(&s, &c).unwrap().max_abs() < 1e-11);

        let x = s.interpolate(|p| p[0]);
        let ax = apply_stiffness(&s, &x).unwrap();
        assert!((s.global_dot(&ax, &x) - 1.0).abs() < 1e-12);
        let interior = s.boundary_mask(s.mesh().sides(), &[BoundaryKind::Dirichlet]);
        for (v, m) in ax.iter().zip(&interior) {
            if *m == 1.0 {
                assert!(v.abs() < 1e-11);
            }
        }

        let u = random_continuous(&s, 1);
        let v = random_continuous(&s, 2);
        let au = apply_stiffness(&s, &u).unwrap();
        let av = apply_stiffness(&s, &v).unwrap();
        assert!((s.global_dot(&au, &v) - s.global_dot(&av, &u)).abs() < 1e-11);
    }

    #[test]
    fn stiffness_diagonal_matches_unit_vectors() {
        let mesh = BoxMesh::new(3, &[2, 1, 2], &[[0.0, 1.0], [0.0, 2.0], [0.0, 0.7]])
            .grading(0, 1.6)
            .build()
            .unwrap();
        let s = Space::new(mesh, Basis1D::new(3).unwrap()).unwrap();
        let gs = s.gather_scatter();
        let diag = stiffness_diagonal(&s);
        for g in (0..gs.num_global()).step_by(7) {
            let mut e = vec![0.0; gs.num_global()];
            e[g] = 1.0;
            let ae = apply_stiffness(&s, &gs.scatter(&e)).unwrap();
            let l = gs.global_ids().iter().position(|&x| x == g).unwrap();
            assert!((ae[l] - diag[l]).abs() < 1e-12 * ae[l].abs().max(1.0));
        }
    }

    #[test]
    fn gradient_and_divergence_examples() {
        let s = square(4, 2, 2, false);
        let g = apply_gradient(&s, &s.interpolate(|_| 3.0)).unwrap();
        assert!(g.iter().all(|c| c.max_abs() < 1e-12));

        let g = apply_gradient(&s, &s.interpolate(|p| p[0] * p[0])).unwrap();
        let expect = s.interpolate(|p| 2.0 * p[0]);
        assert!(g[0].max_abs_diff(&expect) < 1e-10);
        assert!(g[1].max_abs() < 1e-10);

        let u = vec![s.interpolate(|p| p[1]), s.interpolate(|p| -p[0])];
        assert!(apply_divergence(&s, &u).unwrap().max_abs() < 1e-11);

        let u = vec![
            s.interpolate(|p| p[0] * p[1] * p[1]),
            s.interpolate(|p| p[1].powi(3)),
        ];
        let div = apply_divergence(&s, &u).unwrap();
        let expect = s.interpolate(|p| 4.0 * p[1] * p[1]);
        assert!(div.max_abs_diff(&expect) < 1e-10);
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let s = square(5, 3, 2, true);
        for seed in 0..4 {
            let u = vec![
                random_continuous(&s, 10 + seed),
                random_continuous(&s, 20 + seed),
            ];
            let p = random_continuous(&s, 30 + seed);
            let div = apply_divergence(&s, &u).unwrap();
            let grad = apply_gradient(&s, &p).unwrap();
            let lhs = s.inner(&div, &p) + s.inner(&u[0], &grad[0]) + s.inner(&u[1], &grad[1]);
            let scale = (s.norm(&u[0]).powi(2) + s.norm(&u[1]).powi(2)).sqrt() * s.norm(&p);
            assert!(lhs.abs() <= 1e-10 * scale, "{lhs}");
        }
    }

    #[test]
    fn convection_examples() {
        let s = square(6, 2, 2, false);
        let theta = s.interpolate(|p| (p[0] * 3.0).sin() + p[1]);
        let zero = vec![s.zeros(), s.zeros()];
        for dealias in [false, true] {
            assert!(
                apply_convection(&s, &zero, &theta, dealias)
                    .unwrap()
                    .max_abs()
                    < 1e-14
            );
            let ux = vec![s.interpolate(|_| 1.0), s.zeros()];
            let out = apply_convection(&s, &ux, &s.interpolate(|p| p[0]), dealias).unwrap();
            assert!(
                out.iter().all(|v| (v - 1.0).abs() < 1e-12),
                "dealias={dealias}"
            );
        }
        assert_eq!(s.dealias_points(), 11);
    }

    #[test]
    fn dealiased_convection_is_skew_on_periodic_domains() {
        let mesh = BoxMesh::new(2, &[3, 3], &[[0.0, 2.0 * std::f64::consts::PI]; 2])
            .periodic(0, true)
            .periodic(1, true)
            .build()
            .unwrap();
        let s = Space::new(mesh, Basis1D::new(6).unwrap()).unwrap();
        // each component depends on the other coordinate only: exactly solenoidal
        let u = vec![
            s.interpolate(|p| p[1].sin() + 0.5),
            s.interpolate(|p| (2.0 * p[0]).cos()),
        ];
        let theta = s.interpolate(|p| (p[0] + 2.0 * p[1]).sin() + (3.0 * p[0]).cos());
        let c = apply_convection(&s, &u, &theta, true).unwrap();
        let val = s.inner(&c, &theta);
        assert!(val.abs() <= 1e-8 * s.norm(&theta).powi(2), "{val}");
    }

    #[test]
    fn filter_examples() {
        let s = square(6, 2, 2, false);
        let c = s.interpolate(|_| 1.25);
        assert!(apply_filter(&s, &c, 2, 0.4).unwrap().max_abs_diff(&c) < 1e-13);

        let single = square(7, 1, 1, false);
        let top = single.interpolate(|p| legendre(7, 2.0 * p[0] - 1.0).0);
        assert!(apply_filter(&single, &top, 1, 1.0).unwrap().max_abs() < 1e-11);

        let u = random_continuous(&s, 5);
        let f = apply_filter(&s, &u, 2, 0.3).unwrap();
        assert!(s.norm(&f) < s.norm(&u));
        assert!(apply_filter(&s, &u, 0, 0.3).is_err());
    }

    #[test]
    fn helmholtz_combines_mass_and_stiffness() {
        let s = square(4, 2, 2, false);
        let u = random_continuous(&s, 9);
        let mut h = vec![0.0; s.len()];
        apply_helmholtz(&s, &u, 0.3, 2.0, &mut h);
        let mut expect = apply_stiffness(&s, &u).unwrap();
        expect.scale(0.3);
        expect.axpy(2.0, &apply_mass(&s, &u).unwrap());
        for (a, b) in h.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn probes_interpolate_inside_elements() {
        let s = square(5, 2, 3, false);
        let u = s.interpolate(|p| p[0].powi(3) - p[0] * p[1] + 2.0);
        let p = [0.37, 0.81];
        let v = s.evaluate(&u, &p).unwrap();
        assert!((v - (0.37f64.powi(3) - 0.37 * 0.81 + 2.0)).abs() < 1e-12);
        assert!(s.evaluate(&u, &[1.5, 0.5]).is_none());
    }
}
