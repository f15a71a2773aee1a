//! Structured box meshes of quadrilateral / hexahedral elements, their
//! geometric factors, and the gather-scatter map used for direct stiffness
//! summation.
//!
//! Element `e` of a box with `counts = (cx, cy, cz)` has axis indices
//! `(e % cx, (e / cx) % cy, e / (cx * cy))`. Element faces are numbered
//! `2 * axis + side`, side 0 on the low end of the reference axis. Domain sides
//! use the same convention (`0 = x-low, 1 = x-high, 2 = y-low, ...`).

use crate::basis::Basis1D;
use crate::error::{Result, SemError};
use crate::matrix::Matrix;
use crate::tensor::{apply_axis, cube_shape, unflatten};

/// Tolerance (mesh units) under which two nodes are considered coincident.
pub const NODE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    Interior { element: usize, face: usize },
    Boundary { side: usize, kind: BoundaryKind },
    Periodic { element: usize, face: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    counts: Vec<usize>,
    bounds: Vec<[f64; 2]>,
    periodic: Vec<bool>,
    breaks: Vec<Vec<f64>>,
    sides: Vec<BoundaryKind>,
    elements: Vec<Vec<[f64; 3]>>,
    face_tags: Vec<Vec<FaceTag>>,
}

/// Builder for a tensor-product box mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMesh {
    dim: usize,
    counts: Vec<usize>,
    bounds: Vec<[f64; 2]>,
    periodic: Vec<bool>,
    grading: Vec<f64>,
    sides: Vec<BoundaryKind>,
}

impl BoxMesh {
    pub fn new(dim: usize, counts: &[usize], bounds: &[[f64; 2]]) -> Self {
        Self {
            dim,
            counts: counts.to_vec(),
            bounds: bounds.to_vec(),
            periodic: vec![false; dim],
            grading: vec![1.0; dim],
            sides: vec![BoundaryKind::Dirichlet; 2 * dim],
        }
    }

    pub fn periodic(mut self, axis: usize, on: bool) -> Self {
        if axis < self.periodic.len() {
            self.periodic[axis] = on;
        }
        self
    }

    /// Element widths along `axis` follow `ratio^k`, `k = 0` at the low end.
    pub fn grading(mut self, axis: usize, ratio: f64) -> Self {
        if axis < self.grading.len() {
            self.grading[axis] = ratio;
        }
        self
    }

    pub fn side(mut self, side: usize, kind: BoundaryKind) -> Self {
        if side < self.sides.len() {
            self.sides[side] = kind;
        }
        self
    }

    pub fn build(self) -> Result<Mesh> {
        let dim = self.dim;
        if !(dim == 2 || dim == 3) {
            return Err(SemError::Construction(format!(
                "dimension {dim} not supported"
            )));
        }
        for (name, len) in [("counts", self.counts.len()), ("bounds", self.bounds.len())] {
            if len != dim {
                return Err(SemError::Construction(format!(
                    "{name} has {len} entries for a {dim}-D mesh"
                )));
            }
        }
        let mut breaks = Vec::with_capacity(dim);
        for d in 0..dim {
            let n = self.counts[d];
            let [lo, hi] = self.bounds[d];
            if n == 0 {
                return Err(SemError::Construction(format!(
                    "zero element count on axis {d}"
                )));
            }
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SemError::Construction(format!(
                    "degenerate bounds [{lo}, {hi}] on axis {d}"
                )));
            }
            let r = self.grading[d];
            if !(r.is_finite() && r > 0.0) {
                return Err(SemError::Construction(format!(
                    "grading ratio {r} on axis {d} must be positive"
                )));
            }
            breaks.push(graded_breaks(lo, hi, n, r));
        }

        let mut sides = self.sides.clone();
        for d in 0..dim {
            if self.periodic[d] {
                sides[2 * d] = BoundaryKind::Periodic;
                sides[2 * d + 1] = BoundaryKind::Periodic;
            } else if sides[2 * d] == BoundaryKind::Periodic
                || sides[2 * d + 1] == BoundaryKind::Periodic
            {
                return Err(SemError::Construction(format!(
                    "axis {d} has a periodic side but is not flagged periodic"
                )));
            }
        }

        let mut counts3 = [1usize; 3];
        counts3[..dim].copy_from_slice(&self.counts);
        let n_elem: usize = counts3.iter().product();
        let mut elements = Vec::with_capacity(n_elem);
        let mut face_tags = Vec::with_capacity(n_elem);
        for e in 0..n_elem {
            let idx = [
                e % counts3[0],
                (e / counts3[0]) % counts3[1],
                e / (counts3[0] * counts3[1]),
            ];
            let corners: Vec<[f64; 3]> = (0..1usize << dim)
                .map(|c| {
                    let mut p = [0.0; 3];
                    for d in 0..dim {
                        p[d] = breaks[d][idx[d] + ((c >> d) & 1)];
                    }
                    p
                })
                .collect();
            elements.push(corners);

            let mut tags = Vec::with_capacity(2 * dim);
            for d in 0..dim {
                for s in 0..2 {
                    let at_edge = if s == 0 {
                        idx[d] == 0
                    } else {
                        idx[d] + 1 == counts3[d]
                    };
                    let mut nb = idx;
                    let tag = if !at_edge {
                        nb[d] = if s == 0 { idx[d] - 1 } else { idx[d] + 1 };
                        FaceTag::Interior {
                            element: flat(nb, counts3),
                            face: 2 * d + (1 - s),
                        }
                    } else if self.periodic[d] {
                        nb[d] = if s == 0 { counts3[d] - 1 } else { 0 };
                        FaceTag::Periodic {
                            element: flat(nb, counts3),
                            face: 2 * d + (1 - s),
                        }
                    } else {
                        FaceTag::Boundary {
                            side: 2 * d + s,
                            kind: sides[2 * d + s],
                        }
                    };
                    tags.push(tag);
                }
            }
            face_tags.push(tags);
        }

        Ok(Mesh {
            dim,
            counts: self.counts,
            bounds: self.bounds,
            periodic: self.periodic,
            breaks,
            sides,
            elements,
            face_tags,
        })
    }
}

fn flat(idx: [usize; 3], counts: [usize; 3]) -> usize {
    idx[0] + counts[0] * (idx[1] + counts[1] * idx[2])
}

fn graded_breaks(lo: f64, hi: f64, n: usize, ratio: f64) -> Vec<f64> {
    let widths: Vec<f64> = (0..n).map(|k| ratio.powi(k as i32)).collect();
    let total: f64 = widths.iter().sum();
    let mut out = Vec::with_capacity(n + 1);
    out.push(lo);
    let mut acc = 0.0;
    for w in &widths[..n - 1] {
        acc += w;
        out.push(lo + (hi - lo) * acc / total);
    }
    out.push(hi);
    out
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    /// Element interface coordinates along `axis`.
    pub fn breaks(&self, axis: usize) -> &[f64] {
        &self.breaks[axis]
    }

    pub fn side_kind(&self, side: usize) -> BoundaryKind {
        self.sides[side]
    }

    pub fn sides(&self) -> &[BoundaryKind] {
        &self.sides
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_corners(&self, e: usize) -> &[[f64; 3]] {
        &self.elements[e]
    }

    pub fn face_tags(&self, e: usize) -> &[FaceTag] {
        &self.face_tags[e]
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|[lo, hi]| hi - lo).product()
    }

    /// Axis indices of element `e`.
    pub fn element_index(&self, e: usize) -> [usize; 3] {
        let c0 = self.counts[0];
        let c1 = if self.dim > 1 { self.counts[1] } else { 1 };
        [e % c0, (e / c0) % c1, e / (c0 * c1)]
    }

    /// Reference coordinates of a physical point, with the owning element.
    /// Points on shared faces resolve to the lowest-index containing element.
    pub fn locate(&self, point: &[f64]) -> Option<(usize, [f64; 3])> {
        let mut idx = [0usize; 3];
        let mut xi = [0.0; 3];
        for d in 0..self.dim {
            let b = &self.breaks[d];
            let p = point[d];
            let tol = NODE_TOLERANCE;
            if p < b[0] - tol || p > b[b.len() - 1] + tol {
                return None;
            }
            let k = b
                .windows(2)
                .position(|w| p <= w[1] + tol)
                .unwrap_or(b.len() - 2);
            idx[d] = k;
            let (lo, hi) = (b[k], b[k + 1]);
            xi[d] = (2.0 * (p - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        }
        let mut counts3 = [1usize; 3];
        counts3[..self.dim].copy_from_slice(&self.counts);
        Some((flat(idx, counts3), xi))
    }
}

/// Physical coordinates and metric data at every node of every element.
#[derive(Debug, Clone)]
pub struct GeometricFactors {
    dim: usize,
    nodes_per_element: usize,
    /// `coords[d][local]`.
    coords: Vec<Vec<f64>>,
    jacobian: Vec<f64>,
    /// `metric[i * dim + j][local] = d xi_i / d x_j`.
    metric: Vec<Vec<f64>>,
    faces: Vec<BoundaryFace>,
}

/// Quadrature data for one element face lying on the domain boundary.
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub element: usize,
    pub face: usize,
    pub side: usize,
    pub kind: BoundaryKind,
    /// Element-local node indices on the face.
    pub nodes: Vec<usize>,
    /// Surface quadrature weight (1-D weights times surface jacobian).
    pub weights: Vec<f64>,
    /// Outward unit normal per face node.
    pub normals: Vec<[f64; 3]>,
}

impl GeometricFactors {
    pub fn compute(mesh: &Mesh, basis: &Basis1D) -> Result<Self> {
        let dim = mesh.dim;
        let np = basis.len();
        let npe = np.pow(dim as u32);
        let ne = mesh.num_elements();
        let xi = basis.nodes();
        let shape = cube_shape(np, dim);

        let mut coords = vec![vec![0.0; ne * npe]; dim];
        let mut jacobian = vec![0.0; ne * npe];
        let mut metric = vec![vec![0.0; ne * npe]; dim * dim];
        let mut faces = Vec::new();

        let mut local_x = vec![vec![0.0; npe]; dim];
        // dxdr[d * dim + i] = d x_d / d xi_i
        let mut dxdr = vec![vec![0.0; npe]; dim * dim];
        for e in 0..ne {
            let corners = &mesh.elements[e];
            for l in 0..npe {
                let ijk = unflatten(l, np);
                for (d, lx) in local_x.iter_mut().enumerate() {
                    let mut v = 0.0;
                    for (c, corner) in corners.iter().enumerate() {
                        let mut phi = 1.0;
                        for a in 0..dim {
                            let r = xi[ijk[a]];
                            phi *= if (c >> a) & 1 == 1 {
                                0.5 * (1.0 + r)
                            } else {
                                0.5 * (1.0 - r)
                            };
                        }
                        v += phi * corner[d];
                    }
                    lx[l] = v;
                }
            }
            for d in 0..dim {
                for i in 0..dim {
                    apply_axis(
                        basis.diff_matrix(),
                        &local_x[d],
                        shape,
                        i,
                        &mut dxdr[d * dim + i],
                    );
                }
            }
            for l in 0..npe {
                let g = e * npe + l;
                let mut jm = [[0.0; 3]; 3];
                for d in 0..dim {
                    coords[d][g] = local_x[d][l];
                    for i in 0..dim {
                        jm[d][i] = dxdr[d * dim + i][l];
                    }
                }
                let (det, inv) = invert(&jm, dim);
                if !(det > 0.0) {
                    return Err(SemError::InvertedElement {
                        element: e,
                        node: l,
                        jacobian: det,
                    });
                }
                jacobian[g] = det;
                for i in 0..dim {
                    for j in 0..dim {
                        metric[i * dim + j][g] = inv[i][j];
                    }
                }
            }

            for (face, tag) in mesh.face_tags[e].iter().enumerate() {
                let FaceTag::Boundary { side, kind } = *tag else {
                    continue;
                };
                let axis = face / 2;
                let hi = face % 2 == 1;
                let fixed = if hi { np - 1 } else { 0 };
                let tangents: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
                let mut fnodes = Vec::new();
                let mut weights = Vec::new();
                let mut normals = Vec::new();
                for l in 0..npe {
                    let ijk = unflatten(l, np);
                    if ijk[axis] != fixed {
                        continue;
                    }
                    let col = |i: usize| -> [f64; 3] {
                        let mut v = [0.0; 3];
                        for d in 0..dim {
                            v[d] = dxdr[d * dim + i][l];
                        }
                        v
                    };
                    let (mut n, area) = if dim == 2 {
                        let t = col(tangents[0]);
                        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
                        ([t[1] / len, -t[0] / len, 0.0], len)
                    } else {
                        let a = col(tangents[0]);
                        let b = col(tangents[1]);
                        let c = [
                            a[1] * b[2] - a[2] * b[1],
                            a[2] * b[0] - a[0] * b[2],
                            a[0] * b[1] - a[1] * b[0],
                        ];
                        let len = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                        ([c[0] / len, c[1] / len, c[2] / len], len)
                    };
                    // orient outward: along +grad(xi_axis) on the high face
                    let mut dot = 0.0;
                    for (j, nj) in n.iter().enumerate().take(dim) {
                        dot += nj * metric[axis * dim + j][e * npe + l];
                    }
                    if (dot < 0.0) == hi {
                        n.iter_mut().for_each(|v| *v = -*v);
                    }
                    let w: f64 = tangents.iter().map(|&a| basis.weights()[ijk[a]]).product();
                    fnodes.push(l);
                    weights.push(w * area);
                    normals.push(n);
                }
                faces.push(BoundaryFace {
                    element: e,
                    face,
                    side,
                    kind,
                    nodes: fnodes,
                    weights,
                    normals,
                });
            }
        }

        Ok(Self {
            dim,
            nodes_per_element: npe,
            coords,
            jacobian,
            metric,
            faces,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_element(&self) -> usize {
        self.nodes_per_element
    }

    pub fn coords(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }

    pub fn point(&self, local: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for d in 0..self.dim {
            p[d] = self.coords[d][local];
        }
        p
    }

    pub fn jacobian(&self) -> &[f64] {
        &self.jacobian
    }

    /// `d xi_i / d x_j` at every node.
    pub fn metric(&self, i: usize, j: usize) -> &[f64] {
        &self.metric[i * self.dim + j]
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.faces
    }
}

fn invert(m: &[[f64; 3]; 3], dim: usize) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0; 3]; 3];
    if dim == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        inv[0][0] = m[1][1] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
        inv[1][1] = m[0][0] / det;
        (det, inv)
    } else {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        for i in 0..3 {
            for j in 0..3 {
                let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
                let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
                inv[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / det;
            }
        }
        (det, inv)
    }
}

/// Local-to-global node map for direct stiffness summation.
#[derive(Debug, Clone)]
pub struct GatherScatter {
    ids: Vec<usize>,
    multiplicity: Vec<usize>,
    inv_mult_local: Vec<f64>,
}

impl GatherScatter {
    pub fn build(mesh: &Mesh, basis: &Basis1D) -> Self {
        let dim = mesh.dim;
        let n = basis.order();
        let np = basis.len();
        let npe = np.pow(dim as u32);
        let mut extents = [1usize; 3];
        for d in 0..dim {
            extents[d] = if mesh.periodic[d] {
                mesh.counts[d] * n
            } else {
                mesh.counts[d] * n + 1
            };
        }
        let n_global: usize = extents.iter().product();
        let mut ids = Vec::with_capacity(mesh.num_elements() * npe);
        for e in 0..mesh.num_elements() {
            let eidx = mesh.element_index(e);
            for l in 0..npe {
                let ijk = unflatten(l, np);
                let mut g = [0usize; 3];
                for d in 0..dim {
                    g[d] = (eidx[d] * n + ijk[d]) % extents[d];
                }
                ids.push(g[0] + extents[0] * (g[1] + extents[1] * g[2]));
            }
        }
        let mut multiplicity = vec![0usize; n_global];
        for &g in &ids {
            multiplicity[g] += 1;
        }
        let inv_mult_local = ids.iter().map(|&g| 1.0 / multiplicity[g] as f64).collect();
        Self {
            ids,
            multiplicity,
            inv_mult_local,
        }
    }

    pub fn global_ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    pub fn num_global(&self) -> usize {
        self.multiplicity.len()
    }

    pub fn num_local(&self) -> usize {
        self.ids.len()
    }

    /// `1 / multiplicity` at every local node.
    pub fn inverse_multiplicity(&self) -> &[f64] {
        &self.inv_mult_local
    }

    /// Sum of local copies into global storage.
    pub fn sum_to_global(&self, local: &[f64]) -> Vec<f64> {
        let mut global = vec![0.0; self.num_global()];
        for (&g, &v) in self.ids.iter().zip(local) {
            global[g] += v;
        }
        global
    }

    /// Average of local copies.
    pub fn gather(&self, local: &[f64]) -> Vec<f64> {
        let mut global = self.sum_to_global(local);
        for (g, m) in global.iter_mut().zip(&self.multiplicity) {
            *g /= *m as f64;
        }
        global
    }

    /// Copies global values to every local copy.
    pub fn scatter(&self, global: &[f64]) -> Vec<f64> {
        self.ids.iter().map(|&g| global[g]).collect()
    }

    /// Direct stiffness summation: every local copy receives the sum over
    /// all copies of its global node. Fixed (element-major) reduction order.
    pub fn dssum(&self, local: &mut [f64]) {
        let global = self.sum_to_global(local);
        for (v, &g) in local.iter_mut().zip(&self.ids) {
            *v = global[g];
        }
    }
}

/// Near-wall resolution summary for one wall-tagged side.
#[derive(Debug, Clone, PartialEq)]
pub struct WallResolution {
    pub side: usize,
    /// `y+` of the first node off the wall.
    pub first_yplus: f64,
    /// Off-wall nodes with `y+ < 10`.
    pub points_below_10: usize,
    pub pass: bool,
}

/// Checks every Dirichlet side against the rule "first node at y+ < 1 and at
/// least five nodes within y+ < 10".
pub fn yplus_spacing_report(
    mesh: &Mesh,
    basis: &Basis1D,
    friction_velocity: f64,
    viscosity: f64,
) -> Result<Vec<WallResolution>> {
    if !(friction_velocity > 0.0 && viscosity > 0.0) {
        return Err(SemError::Parameter(
            "friction velocity and viscosity must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    for side in 0..2 * mesh.dim {
        if mesh.sides[side] != BoundaryKind::Dirichlet {
            continue;
        }
        let axis = side / 2;
        let line = axis_nodes(mesh, basis, axis);
        let [lo, hi] = mesh.bounds[axis];
        let mut dist: Vec<f64> = line
            .iter()
            .map(|&x| if side % 2 == 0 { x - lo } else { hi - x })
            .filter(|&d| d > NODE_TOLERANCE)
            .collect();
        dist.sort_by(f64::total_cmp);
        let yplus: Vec<f64> = dist
            .iter()
            .map(|d| friction_velocity * d / viscosity)
            .collect();
        let first = yplus.first().copied().unwrap_or(f64::INFINITY);
        let below = yplus.iter().filter(|&&y| y < 10.0).count();
        out.push(WallResolution {
            side,
            first_yplus: first,
            points_below_10: below,
            pass: first < 1.0 && below >= 5,
        });
    }
    Ok(out)
}

/// Distinct physical node positions along one axis of a box mesh.
pub fn axis_nodes(mesh: &Mesh, basis: &Basis1D, axis: usize) -> Vec<f64> {
    let b = &mesh.breaks[axis];
    let mut out = vec![b[0]];
    for w in b.windows(2) {
        for &r in &basis.nodes()[1..] {
            out.push(w[0] + 0.5 * (r + 1.0) * (w[1] - w[0]));
        }
    }
    out
}

/// Interpolation matrix per axis for a reference point, used by probes.
pub fn point_interpolation(basis: &Basis1D, xi: &[f64; 3], dim: usize) -> Result<Vec<Vec<f64>>> {
    (0..dim)
        .map(|d| {
            let m: Matrix = basis.interpolation_matrix(&[xi[d]])?;
            Ok(m.row(0).to_vec())
        })
        .collect()
}
