//! Continuous Lagrange finite element spaces on the piecewise-flat surface.
//!
//! Scalar spaces of degree k with equispaced lattice nodes; vector fields use
//! three interleaved components sharing the scalar DOF map. Gradients are 2D
//! chart gradients; ambient gradients are never formed.

use std::sync::Arc;

use nalgebra::{DMatrix, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::poly::TriangleBasis;

pub struct LagrangeSpace {
    pub mesh: Arc<SurfaceMesh>,
    pub degree: usize,
    /// Number of scalar degrees of freedom.
    pub ndof: usize,
    /// Scalar global DOF ids per element, in local lattice order.
    pub elem_dofs: Vec<Vec<usize>>,
    /// Chart coordinates of the local lattice nodes (element independent).
    pub ref_nodes: Vec<(f64, f64)>,
    /// Ambient position of each scalar DOF node.
    pub node_pos: Vec<Point3<f64>>,
    basis: TriangleBasis,
    /// Nodal-basis coefficients: shape_j = sum_b coeff[(b, j)] phi_b.
    coeff: DMatrix<f64>,
}

/// Finite element field: `ncomp` interleaved components per scalar DOF.
#[derive(Clone)]
pub struct FeField {
    pub space: Arc<LagrangeSpace>,
    pub ncomp: usize,
    pub coeffs: Vec<f64>,
}

pub fn build_lagrange_space(mesh: Arc<SurfaceMesh>, k: usize) -> Result<Arc<LagrangeSpace>> {
    if !(1..=8).contains(&k) {
        return Err(Error::UnsupportedDegree { what: "Lagrange space", got: k });
    }
    let nv = mesh.num_vertices();
    let ne = mesh.num_edges();
    let nf = mesh.num_triangles();
    let per_edge = k - 1;
    let per_face = if k >= 3 { (k - 1) * (k - 2) / 2 } else { 0 };
    let ndof = nv + ne * per_edge + nf * per_face;

    // Local lattice: vertices, then edge nodes in local traversal order, then
    // interior nodes.
    let kf = k as f64;
    let mut ref_nodes: Vec<(f64, f64)> = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    for j in 0..per_edge {
        let t = (j + 1) as f64 / kf;
        ref_nodes.push((t, 0.0));
    }
    for j in 0..per_edge {
        let t = (j + 1) as f64 / kf;
        ref_nodes.push((1.0 - t, t));
    }
    for j in 0..per_edge {
        let t = (j + 1) as f64 / kf;
        ref_nodes.push((0.0, 1.0 - t));
    }
    let mut interior_lattice = Vec::new();
    for i in 1..k {
        for j in 1..k {
            if i + j <= k - 1 {
                interior_lattice.push((i, j));
                ref_nodes.push((i as f64 / kf, j as f64 / kf));
            }
        }
    }
    debug_assert_eq!(ref_nodes.len(), (k + 1) * (k + 2) / 2);

    let basis = TriangleBasis::new(k);
    let n_loc = ref_nodes.len();
    let mut vand = DMatrix::zeros(n_loc, n_loc);
    for (i, &(x, y)) in ref_nodes.iter().enumerate() {
        let vals = basis.eval(x, y);
        for (b, &v) in vals.iter().enumerate() {
            vand[(i, b)] = v;
        }
    }
    let coeff = vand
        .lu()
        .try_inverse()
        .ok_or(Error::UnsupportedDegree { what: "Lagrange nodal basis", got: k })?;

    let mut node_pos = vec![Point3::origin(); ndof];
    for (v, p) in mesh.vertices.iter().enumerate() {
        node_pos[v] = *p;
    }
    for (e, edge) in mesh.edges.iter().enumerate() {
        let (lo, hi) = (mesh.vertices[edge.verts[0]], mesh.vertices[edge.verts[1]]);
        for j in 0..per_edge {
            let t = (j + 1) as f64 / kf;
            node_pos[nv + e * per_edge + j] = Point3::from(lo.coords * (1.0 - t) + hi.coords * t);
        }
    }

    let mut elem_dofs = Vec::with_capacity(nf);
    for t in 0..nf {
        let tri = mesh.triangles[t];
        let mut dofs = Vec::with_capacity(n_loc);
        dofs.extend_from_slice(&[tri[0], tri[1], tri[2]]);
        for le in 0..3 {
            let (eidx, forward) = mesh.tri_edges[t][le];
            for j in 0..per_edge {
                let slot = if forward { j } else { per_edge - 1 - j };
                dofs.push(nv + eidx * per_edge + slot);
            }
        }
        for (idx, &(i, j)) in interior_lattice.iter().enumerate() {
            let dof = nv + ne * per_edge + t * per_face + idx;
            dofs.push(dof);
            let bary = [1.0 - (i + j) as f64 / kf, i as f64 / kf, j as f64 / kf];
            node_pos[dof] = mesh.point(t, bary);
        }
        elem_dofs.push(dofs);
    }

    Ok(Arc::new(LagrangeSpace {
        mesh,
        degree: k,
        ndof,
        elem_dofs,
        ref_nodes,
        node_pos,
        basis,
        coeff,
    }))
}

impl LagrangeSpace {
    pub fn n_local(&self) -> usize {
        self.ref_nodes.len()
    }

    /// Shape function values and chart gradients at a chart point.
    pub fn shape(&self, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (phi, dphi) = self.basis.tabulate(x, y);
        let n = self.n_local();
        let mut vals = vec![0.0; n];
        let mut grads = vec![[0.0, 0.0]; n];
        for j in 0..n {
            for b in 0..n {
                let c = self.coeff[(b, j)];
                vals[j] += c * phi[b];
                grads[j][0] += c * dphi[b][0];
                grads[j][1] += c * dphi[b][1];
            }
        }
        (vals, grads)
    }

    /// Tabulate shape values and gradients at a list of chart points.
    pub fn tabulate(&self, points: &[(f64, f64)]) -> (Vec<Vec<f64>>, Vec<Vec<[f64; 2]>>) {
        let mut vals = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for &(x, y) in points {
            let (v, g) = self.shape(x, y);
            vals.push(v);
            grads.push(g);
        }
        (vals, grads)
    }

    pub fn zero_field(self: &Arc<Self>, ncomp: usize) -> FeField {
        FeField { space: self.clone(), ncomp, coeffs: vec![0.0; self.ndof * ncomp] }
    }
}

/// Nodal interpolation of a scalar function given at ambient node positions.
pub fn interpolate_scalar(
    space: &Arc<LagrangeSpace>,
    f: &dyn Fn(&Point3<f64>) -> f64,
) -> FeField {
    let coeffs = space.node_pos.iter().map(f).collect();
    FeField { space: space.clone(), ncomp: 1, coeffs }
}

/// Nodal interpolation of an R^3-valued function.
pub fn interpolate_vector(
    space: &Arc<LagrangeSpace>,
    f: &dyn Fn(&Point3<f64>) -> Vector3<f64>,
) -> FeField {
    let mut coeffs = vec![0.0; space.ndof * 3];
    for (i, p) in space.node_pos.iter().enumerate() {
        let v = f(p);
        coeffs[3 * i] = v.x;
        coeffs[3 * i + 1] = v.y;
        coeffs[3 * i + 2] = v.z;
    }
    FeField { space: space.clone(), ncomp: 3, coeffs }
}

impl FeField {
    /// Scalar evaluation with chart gradient.
    pub fn eval_scalar(&self, tri: usize, bary: [f64; 3]) -> (f64, [f64; 2]) {
        debug_assert_eq!(self.ncomp, 1);
        let (vals, grads) = self.space.shape(bary[1], bary[2]);
        let dofs = &self.space.elem_dofs[tri];
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for (a, &dof) in dofs.iter().enumerate() {
            let c = self.coeffs[dof];
            v += vals[a] * c;
            g[0] += grads[a][0] * c;
            g[1] += grads[a][1] * c;
        }
        (v, g)
    }

    /// Vector evaluation with the two chart partial derivatives.
    pub fn eval_vector(&self, tri: usize, bary: [f64; 3]) -> (Vector3<f64>, [Vector3<f64>; 2]) {
        debug_assert_eq!(self.ncomp, 3);
        let (vals, grads) = self.space.shape(bary[1], bary[2]);
        self.combine_vector(tri, &vals, &grads)
    }

    /// Same as [`FeField::eval_vector`] but with pre-tabulated shapes.
    pub fn combine_vector(
        &self,
        tri: usize,
        vals: &[f64],
        grads: &[[f64; 2]],
    ) -> (Vector3<f64>, [Vector3<f64>; 2]) {
        let dofs = &self.space.elem_dofs[tri];
        let mut v = Vector3::zeros();
        let mut g = [Vector3::zeros(), Vector3::zeros()];
        for (a, &dof) in dofs.iter().enumerate() {
            let c = Vector3::new(
                self.coeffs[3 * dof],
                self.coeffs[3 * dof + 1],
                self.coeffs[3 * dof + 2],
            );
            v += c * vals[a];
            g[0] += c * grads[a][0];
            g[1] += c * grads[a][1];
        }
        (v, g)
    }

    /// Nodal value of a 3-component field at a scalar DOF.
    pub fn node_value3(&self, dof: usize) -> Vector3<f64> {
        Vector3::new(self.coeffs[3 * dof], self.coeffs[3 * dof + 1], self.coeffs[3 * dof + 2])
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// self += s * other
    pub fn add_scaled(&mut self, s: f64, other: &FeField) {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    /// Linear combination of fields over one space.
    pub fn linear_combination(terms: &[(f64, &FeField)]) -> FeField {
        let first = terms[0].1;
        let mut out = FeField {
            space: first.space.clone(),
            ncomp: first.ncomp,
            coeffs: vec![0.0; first.coeffs.len()],
        };
        for &(s, f) in terms {
            out.add_scaled(s, f);
        }
        out
    }
}

/// The six infinitesimal rigid motion fields of an embedded reference field:
/// `e_i x r` for i = 0, 1, 2 followed by the constants `e_i`. Both families
/// are degree-k fields, so nodal interpolation is exact.
pub fn rigid_motion_basis(r: &FeField) -> [FeField; 6] {
    assert_eq!(r.ncomp, 3);
    let space = &r.space;
    std::array::from_fn(|m| {
        let mut coeffs = vec![0.0; space.ndof * 3];
        if m < 3 {
            let mut axis = Vector3::zeros();
            axis[m] = 1.0;
            for dof in 0..space.ndof {
                let v = axis.cross(&r.node_value3(dof));
                coeffs[3 * dof] = v.x;
                coeffs[3 * dof + 1] = v.y;
                coeffs[3 * dof + 2] = v.z;
            }
        } else {
            for dof in 0..space.ndof {
                coeffs[3 * dof + (m - 3)] = 1.0;
            }
        }
        FeField { space: space.clone(), ncomp: 3, coeffs }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_icosphere, mesh_size};
    use crate::refgeom::ReferenceManifold;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn space_dimensions() {
        let mesh = Arc::new(build_icosphere(0).unwrap());
        for (k, dim) in [(1usize, 12), (2, 42), (5, 252)] {
            let space = build_lagrange_space(mesh.clone(), k).unwrap();
            assert_eq!(space.ndof, dim, "k = {k}");
        }
        assert!(build_lagrange_space(mesh, 9).is_err());
    }

    #[test]
    fn interpolate_constant() {
        let mesh = Arc::new(build_icosphere(0).unwrap());
        let space = build_lagrange_space(mesh, 3).unwrap();
        let f = interpolate_scalar(&space, &|_| 2.5);
        assert!(f.coeffs.iter().all(|&c| c == 2.5));
        // Constant field evaluates to the constant with zero gradient.
        let (v, g) = f.eval_scalar(7, [0.21, 0.33, 0.46]);
        assert!((v - 2.5).abs() < 1e-13);
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn partition_of_unity() {
        let mesh = Arc::new(build_icosphere(1).unwrap());
        let space = build_lagrange_space(mesh, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let x = rng.gen_range(0.0..1.0);
            let y = rng.gen_range(0.0..(1.0 - x));
            let (vals, grads) = space.shape(x, y);
            let s: f64 = vals.iter().sum();
            assert!((s - 1.0).abs() < 1e-13);
            let gx: f64 = grads.iter().map(|g| g[0]).sum();
            let gy: f64 = grads.iter().map(|g| g[1]).sum();
            assert!(gx.abs() < 1e-11 && gy.abs() < 1e-11);
        }
    }

    #[test]
    fn polynomial_reproduction_on_flat_triangle() {
        // Ambient cubic restricted to a flat element is a chart cubic.
        let s = 1.0 / 2.0f64.sqrt();
        let verts = vec![
            Point3::new(s, s, s),
            Point3::new(s, -s, -s),
            Point3::new(-s, s, -s),
            Point3::new(-s, -s, s),
        ];
        let tris = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        let mesh = Arc::new(crate::mesh::SurfaceMesh::from_raw(verts, tris).unwrap());
        let space = build_lagrange_space(mesh.clone(), 3).unwrap();
        let f = |p: &Point3<f64>| p.x * p.x * p.y - 2.0 * p.z.powi(3) + p.x - 0.5;
        let fh = interpolate_scalar(&space, &f);
        let mut rng = StdRng::seed_from_u64(2);
        for tri in 0..mesh.num_triangles() {
            for _ in 0..20 {
                let x = rng.gen_range(0.05..0.9);
                let y = rng.gen_range(0.05..(0.95 - x));
                let bary = [1.0 - x - y, x, y];
                let (v, _) = fh.eval_scalar(tri, bary);
                let exact = f(&mesh.point(tri, bary));
                assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
            }
        }
        // Nodes match exactly.
        for (dof, p) in space.node_pos.iter().enumerate() {
            assert!((fh.coeffs[dof] - f(p)).abs() < 1e-14);
        }
    }

    #[test]
    fn chart_coordinate_field_has_unit_gradient() {
        let mesh = Arc::new(build_icosphere(0).unwrap());
        let space = build_lagrange_space(mesh, 4).unwrap();
        // Coefficients equal to the chart x1 lattice coordinate of element 0.
        let mut f = space.zero_field(1);
        for (a, &dof) in space.elem_dofs[0].iter().enumerate() {
            f.coeffs[dof] = space.ref_nodes[a].0;
        }
        for (x, y) in [(0.2, 0.3), (0.5, 0.1), (0.05, 0.85)] {
            let (v, g) = f.eval_scalar(0, [1.0 - x - y, x, y]);
            assert!((v - x).abs() < 1e-12);
            assert!((g[0] - 1.0).abs() < 1e-11 && g[1].abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mesh = Arc::new(build_icosphere(1).unwrap());
        let space = build_lagrange_space(mesh, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut f = space.zero_field(1);
        for c in &mut f.coeffs {
            *c = rng.gen_range(-1.0..1.0);
        }
        let eps = 1e-6;
        for _ in 0..30 {
            let tri = rng.gen_range(0..space.mesh.num_triangles());
            let x = rng.gen_range(0.1..0.8);
            let y = rng.gen_range(0.1..(0.9 - x));
            let (_, g) = f.eval_scalar(tri, [1.0 - x - y, x, y]);
            let vxp = f.eval_scalar(tri, [1.0 - x - eps - y, x + eps, y]).0;
            let vxm = f.eval_scalar(tri, [1.0 - x + eps - y, x - eps, y]).0;
            let vyp = f.eval_scalar(tri, [1.0 - x - y - eps, x, y + eps]).0;
            let vym = f.eval_scalar(tri, [1.0 - x - y + eps, x, y - eps]).0;
            assert!(((vxp - vxm) / (2.0 * eps) - g[0]).abs() < 1e-7);
            assert!(((vyp - vym) / (2.0 * eps) - g[1]).abs() < 1e-7);
        }
    }

    #[test]
    fn cross_edge_continuity() {
        let mesh = Arc::new(build_icosphere(1).unwrap());
        let space = build_lagrange_space(mesh.clone(), 5).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let mut f = space.zero_field(1);
        for c in &mut f.coeffs {
            *c = rng.gen_range(-1.0..1.0);
        }
        let (gp, _) = crate::quad::edge_rule(5);
        for (eidx, edge) in mesh.edges.iter().enumerate() {
            for &t in &gp {
                let mut vals = [0.0; 2];
                for (side, &tri) in edge.tris.iter().enumerate() {
                    let (a, b) = mesh.edge_chart_endpoints(eidx, tri);
                    let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    vals[side] = f.eval_scalar(tri, [1.0 - x[0] - x[1], x[0], x[1]]).0;
                }
                assert!((vals[0] - vals[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lifted_interpolation_order() {
        // Smooth lifted function: L-inf error decays at order k + 1.
        let man = ReferenceManifold::Sphere;
        let k = 3usize;
        let f = |q: &Point3<f64>| (2.0 * q.x + q.y).sin() * q.z.cos();
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for level in 1..=3 {
            let mesh = Arc::new(build_icosphere(level).unwrap());
            hs.push(mesh_size(&mesh));
            let space = build_lagrange_space(mesh.clone(), k).unwrap();
            let lifted = |p: &Point3<f64>| f(&man.closest_point(p).unwrap());
            let fh = interpolate_scalar(&space, &lifted);
            let rule = crate::quad::quadrature_rule(12).unwrap();
            let mut emax: f64 = 0.0;
            for tri in 0..mesh.num_triangles() {
                for pt in &rule.points {
                    let (v, _) = fh.eval_scalar(tri, *pt);
                    let exact = lifted(&mesh.point(tri, *pt));
                    emax = emax.max((v - exact).abs());
                }
            }
            errs.push(emax);
        }
        let slope1 = (errs[0] / errs[1]).ln() / (hs[0] / hs[1]).ln();
        let slope2 = (errs[1] / errs[2]).ln() / (hs[1] / hs[2]).ln();
        assert!(
            (slope1 - 4.0).abs() < 0.5 || (slope2 - 4.0).abs() < 0.3,
            "slopes {slope1} {slope2}"
        );
    }

    #[test]
    fn rigid_motion_basis_patterns() {
        let mesh = Arc::new(build_icosphere(0).unwrap());
        let space = build_lagrange_space(mesh, 2).unwrap();
        let mut r = space.zero_field(3);
        for dof in 0..space.ndof {
            r.coeffs[3 * dof] = 1.0;
            r.coeffs[3 * dof + 1] = 2.0;
            r.coeffs[3 * dof + 2] = 3.0;
        }
        let rm = rigid_motion_basis(&r);
        // Constant basis e1: coefficient pattern (1, 0, 0) at every node.
        for dof in 0..space.ndof {
            assert_eq!(rm[3].node_value3(dof), Vector3::new(1.0, 0.0, 0.0));
        }
        // alpha = e3 against node value (1,2,3): e3 x (1,2,3) = (-2, 1, 0).
        for dof in 0..space.ndof {
            assert_eq!(rm[2].node_value3(dof), Vector3::new(-2.0, 1.0, 0.0));
        }
    }
}
