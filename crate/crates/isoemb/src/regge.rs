//! Regge finite elements: symmetric (0,2)-tensor fields with
//! tangential-tangential continuity across edges, and the canonical
//! interpolation defined by edge and interior moments.
//!
//! DOFs per element: for each edge, moments of the tt-component against an
//! orthonormal Legendre basis in edge arclength (taken along the global edge
//! direction so both incident elements evaluate the same functional), plus
//! interior moments against an orthonormal symmetric-tensor basis. Shape
//! functions are constructed numerically per element by inverting the local
//! DOF matrix; one implementation serves all degrees.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::poly::{legendre_all, TriangleBasis};
use crate::quad::{edge_rule, quadrature_rule, QuadratureRule};
use crate::refgeom::TensorField;

/// Frobenius-orthonormal basis of symmetric 2x2 matrices.
const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn unit_tensor(u: usize) -> Matrix2<f64> {
    match u {
        0 => Matrix2::new(1.0, 0.0, 0.0, 0.0),
        1 => Matrix2::new(0.0, SQRT_HALF, SQRT_HALF, 0.0),
        _ => Matrix2::new(0.0, 0.0, 0.0, 1.0),
    }
}

pub struct ReggeSpace {
    pub mesh: Arc<SurfaceMesh>,
    pub degree: usize,
    pub ndof: usize,
    /// Global DOF ids per element: 3 x (degree + 1) edge moments (in local
    /// edge order), then the interior moments.
    pub elem_dofs: Vec<Vec<usize>>,
    /// Worst local DOF-matrix condition estimate over all elements.
    pub max_local_condition: f64,
    basis: TriangleBasis,
    /// Interior test basis of degree - 1 (empty for lowest order).
    test_basis: TriangleBasis,
    vand_inv: Vec<DMatrix<f64>>,
    edge_pts: Vec<f64>,
    edge_wts: Vec<f64>,
    area_rule: QuadratureRule,
}

/// Coefficient vector in a Regge space, evaluable as a symmetric 2x2 chart
/// tensor per element.
#[derive(Clone)]
pub struct DiscreteMetric {
    pub space: Arc<ReggeSpace>,
    pub dofs: Vec<f64>,
    /// Per-element coefficients in the (scalar basis x unit tensor) frame.
    elem_coeffs: Vec<DVector<f64>>,
}

pub fn build_regge_space(mesh: Arc<SurfaceMesh>, k_g: usize) -> Result<Arc<ReggeSpace>> {
    if k_g > 8 {
        return Err(Error::UnsupportedDegree { what: "Regge space", got: k_g });
    }
    let ne = mesh.num_edges();
    let nf = mesh.num_triangles();
    let per_edge = k_g + 1;
    let per_face = 3 * k_g * (k_g + 1) / 2;
    let ndof = ne * per_edge + nf * per_face;

    let basis = TriangleBasis::new(k_g);
    let test_basis = TriangleBasis::new(k_g.saturating_sub(1));
    let n_loc = 3 * per_edge + per_face;
    debug_assert_eq!(n_loc, 3 * (k_g + 1) * (k_g + 2) / 2);

    let (edge_pts, edge_wts) = edge_rule(k_g + 4);
    let area_rule = quadrature_rule((2 * k_g + 4).min(30))?;

    let mut elem_dofs = Vec::with_capacity(nf);
    for t in 0..nf {
        let mut dofs = Vec::with_capacity(n_loc);
        for le in 0..3 {
            let (eidx, _) = mesh.tri_edges[t][le];
            for m in 0..per_edge {
                dofs.push(eidx * per_edge + m);
            }
        }
        for j in 0..per_face {
            dofs.push(ne * per_edge + t * per_face + j);
        }
        elem_dofs.push(dofs);
    }

    let mut space = ReggeSpace {
        mesh,
        degree: k_g,
        ndof,
        elem_dofs,
        max_local_condition: 0.0,
        basis,
        test_basis,
        vand_inv: Vec::new(),
        edge_pts,
        edge_wts,
        area_rule,
    };

    let mut vand_inv = Vec::with_capacity(nf);
    let mut max_cond: f64 = 0.0;
    for t in 0..nf {
        let mut vand = DMatrix::zeros(n_loc, n_loc);
        for j in 0..n_loc {
            let (b, u) = (j / 3, j % 3);
            let shape = |x: f64, y: f64| -> Matrix2<f64> {
                let phi = space.basis.eval(x, y);
                unit_tensor(u) * phi[b]
            };
            let col = space.apply_local_dofs(t, &shape);
            for (i, &v) in col.iter().enumerate() {
                vand[(i, j)] = v;
            }
        }
        let norm = vand.abs().row_sum().max();
        let inv = vand
            .lu()
            .try_inverse()
            .ok_or(Error::SingularLocalSolve { elem: t })?;
        max_cond = max_cond.max(norm * inv.abs().row_sum().max());
        vand_inv.push(inv);
    }
    space.vand_inv = vand_inv;
    space.max_local_condition = max_cond;
    Ok(Arc::new(space))
}

impl ReggeSpace {
    pub fn n_local(&self) -> usize {
        3 * (self.degree + 1) + 3 * self.degree * (self.degree + 1) / 2
    }

    /// Chart tangent of the unit 3D edge tangent of local edge `le` of
    /// element `tri`, oriented along the global edge direction, together with
    /// the physical edge length and the chart endpoints.
    fn edge_frame(&self, tri: usize, le: usize) -> ([f64; 2], f64, [f64; 2], [f64; 2]) {
        let (eidx, _) = self.mesh.tri_edges[tri][le];
        let (a, b) = self.mesh.edge_chart_endpoints(eidx, tri);
        let len = self.mesh.edge_length(eidx);
        let tau = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        (tau, len, a, b)
    }

    /// Apply all local DOF functionals to a chart-coordinate tensor function.
    fn apply_local_dofs(&self, tri: usize, sigma: &dyn Fn(f64, f64) -> Matrix2<f64>) -> DVector<f64> {
        let per_edge = self.degree + 1;
        let mut out = DVector::zeros(self.n_local());
        for le in 0..3 {
            let (tau, len, a, b) = self.edge_frame(tri, le);
            for (i, (&t, &w)) in self.edge_pts.iter().zip(&self.edge_wts).enumerate() {
                let _ = i;
                let x = a[0] + t * (b[0] - a[0]);
                let y = a[1] + t * (b[1] - a[1]);
                let s = sigma(x, y);
                let tt = tau[0] * tau[0] * s[(0, 0)]
                    + 2.0 * tau[0] * tau[1] * s[(0, 1)]
                    + tau[1] * tau[1] * s[(1, 1)];
                let leg = legendre_all(self.degree, 2.0 * t - 1.0);
                for m in 0..per_edge {
                    let q = ((2 * m + 1) as f64 / len).sqrt() * leg[m];
                    out[le * per_edge + m] += len * w * tt * q;
                }
            }
        }
        if self.degree > 0 {
            let ntest = self.test_basis.len();
            for (pt, &w) in self.area_rule.points.iter().zip(&self.area_rule.weights) {
                let (x, y) = (pt[1], pt[2]);
                let s = sigma(x, y);
                let psi = self.test_basis.eval(x, y);
                for b in 0..ntest {
                    for u in 0..3 {
                        let q = unit_tensor(u) * psi[b];
                        let frob = s[(0, 0)] * q[(0, 0)]
                            + 2.0 * s[(0, 1)] * q[(0, 1)]
                            + s[(1, 1)] * q[(1, 1)];
                        out[3 * per_edge + 3 * b + u] += w * frob;
                    }
                }
            }
        }
        out
    }

    /// Global DOF values of a tensor field: edge moments once per edge (from
    /// the first incident element), interior moments per element.
    fn global_dofs(&self, sigma: &dyn TensorField) -> Vec<f64> {
        let per_edge = self.degree + 1;
        let ne = self.mesh.num_edges();
        let per_face = 3 * self.degree * (self.degree + 1) / 2;
        let mut dofs = vec![0.0; self.ndof];
        for (eidx, edge) in self.mesh.edges.iter().enumerate() {
            let tri = edge.tris[0];
            let (a, b) = self.mesh.edge_chart_endpoints(eidx, tri);
            let len = self.mesh.edge_length(eidx);
            let tau = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
            for (&t, &w) in self.edge_pts.iter().zip(&self.edge_wts) {
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let s = sigma.eval(tri, [1.0 - x[0] - x[1], x[0], x[1]]);
                let tt = tau[0] * tau[0] * s[(0, 0)]
                    + 2.0 * tau[0] * tau[1] * s[(0, 1)]
                    + tau[1] * tau[1] * s[(1, 1)];
                let leg = legendre_all(self.degree, 2.0 * t - 1.0);
                for m in 0..per_edge {
                    let q = ((2 * m + 1) as f64 / len).sqrt() * leg[m];
                    dofs[eidx * per_edge + m] += len * w * tt * q;
                }
            }
        }
        if self.degree > 0 {
            let ntest = self.test_basis.len();
            for t in 0..self.mesh.num_triangles() {
                for (pt, &w) in self.area_rule.points.iter().zip(&self.area_rule.weights) {
                    let s = sigma.eval(t, *pt);
                    let psi = self.test_basis.eval(pt[1], pt[2]);
                    for b in 0..ntest {
                        for u in 0..3 {
                            let q = unit_tensor(u) * psi[b];
                            let frob = s[(0, 0)] * q[(0, 0)]
                                + 2.0 * s[(0, 1)] * q[(0, 1)]
                                + s[(1, 1)] * q[(1, 1)];
                            dofs[ne * per_edge + t * per_face + 3 * b + u] += w * frob;
                        }
                    }
                }
            }
        }
        dofs
    }
}

/// Canonical Regge interpolation: evaluate the DOFs of `sigma` and solve the
/// local systems.
pub fn regge_interpolate(space: &Arc<ReggeSpace>, sigma: &dyn TensorField) -> DiscreteMetric {
    let dofs = space.global_dofs(sigma);
    DiscreteMetric::from_dofs(space, dofs)
}

impl DiscreteMetric {
    pub fn from_dofs(space: &Arc<ReggeSpace>, dofs: Vec<f64>) -> DiscreteMetric {
        assert_eq!(dofs.len(), space.ndof);
        let elem_coeffs = (0..space.mesh.num_triangles())
            .map(|t| {
                let local = DVector::from_iterator(
                    space.elem_dofs[t].len(),
                    space.elem_dofs[t].iter().map(|&d| dofs[d]),
                );
                &space.vand_inv[t] * local
            })
            .collect();
        DiscreteMetric { space: space.clone(), dofs, elem_coeffs }
    }

    /// Build directly from per-element coefficient vectors in the
    /// (scalar basis x unit tensor) frame; the result need not be
    /// tt-continuous. Global DOFs are left at zero.
    pub fn from_element_coeffs(space: &Arc<ReggeSpace>, elem_coeffs: Vec<DVector<f64>>) -> DiscreteMetric {
        assert_eq!(elem_coeffs.len(), space.mesh.num_triangles());
        DiscreteMetric { space: space.clone(), dofs: vec![0.0; space.ndof], elem_coeffs }
    }

    /// Chart-coordinate tensor value on an element.
    pub fn eval(&self, tri: usize, bary: [f64; 3]) -> Matrix2<f64> {
        let phi = self.space.basis.eval(bary[1], bary[2]);
        let c = &self.elem_coeffs[tri];
        let mut out = Matrix2::zeros();
        for (b, &p) in phi.iter().enumerate() {
            for u in 0..3 {
                out += unit_tensor(u) * (c[3 * b + u] * p);
            }
        }
        out
    }

    /// Absolute tt-jumps across an interior edge at `count` Gauss points.
    pub fn tt_jump(&self, edge: usize, count: usize) -> Result<Vec<f64>> {
        let mesh = &self.space.mesh;
        if edge >= mesh.num_edges() {
            return Err(Error::BoundaryEdge(edge));
        }
        let e = &mesh.edges[edge];
        let (gp, _) = edge_rule(count);
        let len = mesh.edge_length(edge);
        let mut jumps = Vec::with_capacity(count);
        for &t in &gp {
            let mut vals = [0.0; 2];
            for (side, &tri) in e.tris.iter().enumerate() {
                let (a, b) = mesh.edge_chart_endpoints(edge, tri);
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let tau = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
                let s = self.eval(tri, [1.0 - x[0] - x[1], x[0], x[1]]);
                vals[side] = tau[0] * tau[0] * s[(0, 0)]
                    + 2.0 * tau[0] * tau[1] * s[(0, 1)]
                    + tau[1] * tau[1] * s[(1, 1)];
            }
            jumps.push((vals[0] - vals[1]).abs());
        }
        Ok(jumps)
    }
}

impl TensorField for DiscreteMetric {
    fn eval(&self, tri: usize, bary: [f64; 3]) -> Matrix2<f64> {
        DiscreteMetric::eval(self, tri, bary)
    }
}
