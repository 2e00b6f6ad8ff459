//! Analytic reference manifolds and closest-point pullbacks.
//!
//! The closest point projection `a` identifies the piecewise-flat mesh with
//! the smooth manifold; tensors on the manifold are pulled back onto element
//! charts through the Jacobian of `a` composed with the chart map. Jacobians
//! are computed by implicit differentiation of the projection equations so
//! they carry no finite-difference error.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;
use crate::quad::quadrature_rule;

/// Profile curve (x(s), z(s)), s in [0, pi], of a surface of revolution.
/// Returns value, first and second derivative.
pub trait ProfileCurve: Send + Sync {
    fn x(&self, s: f64) -> (f64, f64, f64);
    fn z(&self, s: f64) -> (f64, f64, f64);
}

/// Unit-sphere profile (sin s, cos s); mostly used to cross-check the
/// revolution machinery against the radial projection.
pub struct SphereProfile;

impl ProfileCurve for SphereProfile {
    fn x(&self, s: f64) -> (f64, f64, f64) {
        (s.sin(), s.cos(), -s.sin())
    }
    fn z(&self, s: f64) -> (f64, f64, f64) {
        (s.cos(), -s.sin(), -s.cos())
    }
}

#[derive(Clone)]
pub enum ReferenceManifold {
    /// Unit sphere centred at the origin.
    Sphere,
    /// Axis-aligned ellipsoid with the given semiaxes.
    Ellipsoid([f64; 3]),
    /// Surface of revolution about the z-axis.
    Revolution(Arc<dyn ProfileCurve>),
}

impl std::fmt::Debug for ReferenceManifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReferenceManifold::Sphere => write!(f, "Sphere"),
            ReferenceManifold::Ellipsoid(a) => write!(f, "Ellipsoid({a:?})"),
            ReferenceManifold::Revolution(_) => write!(f, "Revolution"),
        }
    }
}

const NEWTON_MAX_ITER: usize = 50;

impl ReferenceManifold {
    /// Closest point on the manifold.
    pub fn closest_point(&self, p: &Point3<f64>) -> Result<Point3<f64>> {
        match self {
            ReferenceManifold::Sphere => {
                let n = p.coords.norm();
                if n < 1e-13 {
                    return Err(Error::ClosestPointDiverged([p.x, p.y, p.z]));
                }
                Ok(Point3::from(p.coords / n))
            }
            ReferenceManifold::Ellipsoid(a) => {
                let t = ellipsoid_multiplier(a, p)?;
                Ok(Point3::new(
                    a[0] * a[0] * p.x / (a[0] * a[0] + t),
                    a[1] * a[1] * p.y / (a[1] * a[1] + t),
                    a[2] * a[2] * p.z / (a[2] * a[2] + t),
                ))
            }
            ReferenceManifold::Revolution(profile) => {
                let (s, theta) = revolution_foot(profile.as_ref(), p)?;
                let (x, _, _) = profile.x(s);
                let (z, _, _) = profile.z(s);
                Ok(Point3::new(x * theta.cos(), x * theta.sin(), z))
            }
        }
    }

    /// Ambient 3x3 Jacobian of the closest point projection at `p`.
    pub fn closest_point_jacobian(&self, p: &Point3<f64>) -> Result<Matrix3<f64>> {
        match self {
            ReferenceManifold::Sphere => {
                let n = p.coords.norm();
                if n < 1e-13 {
                    return Err(Error::ClosestPointDiverged([p.x, p.y, p.z]));
                }
                let q = p.coords / n;
                Ok((Matrix3::identity() - q * q.transpose()) / n)
            }
            ReferenceManifold::Ellipsoid(av) => {
                let t = ellipsoid_multiplier(av, p)?;
                let a2 = [av[0] * av[0], av[1] * av[1], av[2] * av[2]];
                let q = [
                    a2[0] * p.x / (a2[0] + t),
                    a2[1] * p.y / (a2[1] + t),
                    a2[2] * p.z / (a2[2] + t),
                ];
                // Differentiate q_i (a_i^2 + t) = a_i^2 p_i and the constraint
                // sum q_i^2 / a_i^2 = 1.
                let denom: f64 = (0..3).map(|i| q[i] * q[i] / (a2[i] * (a2[i] + t))).sum();
                let g: Vec<f64> = (0..3).map(|i| q[i] / (a2[i] + t) / denom).collect();
                let mut da = Matrix3::zeros();
                for i in 0..3 {
                    for j in 0..3 {
                        let delta = if i == j { a2[i] } else { 0.0 };
                        da[(i, j)] = (delta - q[i] * g[j]) / (a2[i] + t);
                    }
                }
                Ok(da)
            }
            ReferenceManifold::Revolution(profile) => {
                revolution_jacobian(profile.as_ref(), p)
            }
        }
    }

    /// Outward unit normal at a point `q` on the manifold.
    pub fn normal(&self, q: &Point3<f64>) -> Vector3<f64> {
        match self {
            ReferenceManifold::Sphere => q.coords.normalize(),
            ReferenceManifold::Ellipsoid(a) => {
                let n = Vector3::new(
                    q.x / (a[0] * a[0]),
                    q.y / (a[1] * a[1]),
                    q.z / (a[2] * a[2]),
                );
                n.normalize()
            }
            ReferenceManifold::Revolution(profile) => {
                let rho = (q.x * q.x + q.y * q.y).sqrt();
                let (s, _) = revolution_foot(profile.as_ref(), q).expect("point on manifold");
                let (_, xs, _) = profile.x(s);
                let (_, zs, _) = profile.z(s);
                let (ct, st) = if rho > 1e-14 {
                    (q.x / rho, q.y / rho)
                } else {
                    (1.0, 0.0)
                };
                Vector3::new(-zs * ct, -zs * st, xs).normalize()
            }
        }
    }
}

/// Largest root of F(t) = sum (a_i p_i)^2 / (a_i^2 + t)^2 - 1, via
/// bisection-safeguarded Newton. Tolerance 1e-14 on the residual.
fn ellipsoid_multiplier(a: &[f64; 3], p: &Point3<f64>) -> Result<f64> {
    let a2 = [a[0] * a[0], a[1] * a[1], a[2] * a[2]];
    let ap2 = [
        (a[0] * p.x) * (a[0] * p.x),
        (a[1] * p.y) * (a[1] * p.y),
        (a[2] * p.z) * (a[2] * p.z),
    ];
    let f = |t: f64| -> f64 {
        (0..3).map(|i| ap2[i] / ((a2[i] + t) * (a2[i] + t))).sum::<f64>() - 1.0
    };
    let df = |t: f64| -> f64 {
        -2.0 * (0..3)
            .map(|i| ap2[i] / ((a2[i] + t) * (a2[i] + t) * (a2[i] + t)))
            .sum::<f64>()
    };
    let amin2 = a2.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = a2.iter().cloned().fold(0.0, f64::max);
    // F is decreasing on (-min a^2, inf); bracket the largest root.
    let mut hi = ap2.iter().sum::<f64>().sqrt().max(1e-3 * scale);
    let mut lo = if f(0.0) >= 0.0 { 0.0 } else { -amin2 + 1e-12 * scale };
    if f(lo) < 0.0 {
        return Err(Error::ClosestPointDiverged([p.x, p.y, p.z]));
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..NEWTON_MAX_ITER {
        let val = f(t);
        if val.abs() < 1e-14 {
            return Ok(t);
        }
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let step = val / df(t);
        let mut next = t - step;
        if !(lo..=hi).contains(&next) {
            next = 0.5 * (lo + hi);
        }
        t = next;
    }
    Err(Error::ClosestPointDiverged([p.x, p.y, p.z]))
}

/// Meridian parameter of the foot point of `p` on a surface of revolution,
/// plus the azimuth of `p`. Coarse scan followed by safeguarded Newton on the
/// stationarity equation; points on the axis project to a pole.
fn revolution_foot(profile: &dyn ProfileCurve, p: &Point3<f64>) -> Result<(f64, f64)> {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let theta = p.y.atan2(p.x);
    if rho < 1e-13 {
        // Axis point: nearest pole by distance.
        let (z0, _, _) = profile.z(0.0);
        let (z1, _, _) = profile.z(std::f64::consts::PI);
        let s = if (p.z - z0).abs() <= (p.z - z1).abs() { 0.0 } else { std::f64::consts::PI };
        return Ok((s, theta));
    }
    let dist2 = |s: f64| -> f64 {
        let (x, _, _) = profile.x(s);
        let (z, _, _) = profile.z(s);
        (rho - x) * (rho - x) + (p.z - z) * (p.z - z)
    };
    // d/ds of the squared distance and its derivative.
    let fp = |s: f64| -> (f64, f64) {
        let (x, xs, xss) = profile.x(s);
        let (z, zs, zss) = profile.z(s);
        let d1 = -2.0 * (rho - x) * xs - 2.0 * (p.z - z) * zs;
        let d2 = 2.0 * (xs * xs + zs * zs) - 2.0 * (rho - x) * xss - 2.0 * (p.z - z) * zss;
        (d1, d2)
    };
    const NSCAN: usize = 64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=NSCAN {
        let s = std::f64::consts::PI * i as f64 / NSCAN as f64;
        let d = dist2(s);
        if d < best.1 {
            best = (i, d);
        }
    }
    let mut s = std::f64::consts::PI * best.0 as f64 / NSCAN as f64;
    let mut lo = (s - std::f64::consts::PI / NSCAN as f64).max(0.0);
    let mut hi = (s + std::f64::consts::PI / NSCAN as f64).min(std::f64::consts::PI);
    for _ in 0..NEWTON_MAX_ITER {
        let (d1, d2) = fp(s);
        if d1.abs() < 1e-14 {
            return Ok((s, theta));
        }
        if d2 > 0.0 {
            if d1 > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
        }
        let mut next = s - d1 / d2;
        if !(lo..=hi).contains(&next) || d2 <= 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() < 1e-16 {
            return Ok((next, theta));
        }
        s = next;
    }
    Err(Error::ClosestPointDiverged([p.x, p.y, p.z]))
}

fn revolution_jacobian(profile: &dyn ProfileCurve, p: &Point3<f64>) -> Result<Matrix3<f64>> {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    if rho < 1e-8 {
        // Axis limit: Da = c (I - e3 e3^T) with c from the meridian expansion.
        let near_north = {
            let (z0, _, _) = profile.z(0.0);
            let (z1, _, _) = profile.z(std::f64::consts::PI);
            (p.z - z0).abs() <= (p.z - z1).abs()
        };
        let s0 = if near_north { 0.0 } else { std::f64::consts::PI };
        let (_, xs, _) = profile.x(s0);
        let (z0, _, zss) = profile.z(s0);
        let c = xs * xs / (xs * xs - (p.z - z0) * zss);
        let mut da = Matrix3::identity() * c;
        da[(2, 2)] = 0.0;
        return Ok(da);
    }
    let (s, theta) = revolution_foot(profile, p)?;
    let (x, xs, xss) = profile.x(s);
    let (z, zs, zss) = profile.z(s);
    let (ct, st) = (theta.cos(), theta.sin());
    let e_rho = Vector3::new(ct, st, 0.0);
    let e_theta = Vector3::new(-st, ct, 0.0);
    let p_s = Vector3::new(xs * ct, xs * st, zs);
    // grad s of the foot parameter, from differentiating the stationarity
    // equation in p.
    let f_ss = (xs * xs + zs * zs) - (rho - x) * xss - (p.z - z) * zss;
    let grad_s = (e_rho * xs + Vector3::new(0.0, 0.0, zs)) / f_ss;
    let da = p_s * grad_s.transpose() + e_theta * (x / rho) * e_theta.transpose();
    Ok(da)
}

/// Project every vertex to its closest point on the manifold; connectivity is
/// unchanged.
pub fn project_to_manifold(mesh: &SurfaceMesh, manifold: &ReferenceManifold) -> Result<SurfaceMesh> {
    let vertices = mesh
        .vertices
        .iter()
        .map(|p| manifold.closest_point(p))
        .collect::<Result<Vec<_>>>()?;
    SurfaceMesh::from_raw(vertices, mesh.triangles.clone())
}

/// Symmetric tensor field evaluable in element-chart coordinates.
pub trait TensorField {
    fn eval(&self, tri: usize, bary: [f64; 3]) -> Matrix2<f64>;
}

impl<F: Fn(usize, [f64; 3]) -> Matrix2<f64>> TensorField for F {
    fn eval(&self, tri: usize, bary: [f64; 3]) -> Matrix2<f64> {
        self(tri, bary)
    }
}

/// Ambient symmetric bilinear form on the manifold, evaluated at points of M.
/// Only its action on tangent vectors matters.
pub type AmbientTensor<'a> = &'a (dyn Fn(&Point3<f64>) -> Matrix3<f64> + Sync);

/// Pullback of an ambient tensor onto the element charts of a mesh through the
/// closest point projection: `(J_K)^T G J_K` with `J_K = Da . [e1 e2]`.
pub struct PulledBackMetric<'a> {
    pub mesh: &'a SurfaceMesh,
    pub manifold: &'a ReferenceManifold,
    pub tensor: AmbientTensor<'a>,
}

impl<'a> PulledBackMetric<'a> {
    pub fn new(
        mesh: &'a SurfaceMesh,
        manifold: &'a ReferenceManifold,
        tensor: AmbientTensor<'a>,
    ) -> Self {
        PulledBackMetric { mesh, manifold, tensor }
    }

    /// Chart Jacobian of `a` composed with the chart map (3x2) and the foot
    /// point on the manifold.
    pub fn chart_jacobian(&self, tri: usize, bary: [f64; 3]) -> (Point3<f64>, [Vector3<f64>; 2]) {
        let p = self.mesh.point(tri, bary);
        let q = self.manifold.closest_point(&p).expect("point within reach");
        let da = self.manifold.closest_point_jacobian(&p).expect("point within reach");
        let (_, e1, e2) = self.mesh.chart(tri);
        (q, [da * e1, da * e2])
    }
}

impl TensorField for PulledBackMetric<'_> {
    fn eval(&self, tri: usize, bary: [f64; 3]) -> Matrix2<f64> {
        let (q, j) = self.chart_jacobian(tri, bary);
        let g = (self.tensor)(&q);
        let mut out = Matrix2::zeros();
        for i in 0..2 {
            for k in i..2 {
                let v = (j[i].transpose() * g * j[k])[(0, 0)];
                out[(i, k)] = v;
                out[(k, i)] = v;
            }
        }
        out
    }
}

/// Integral over the exact surface of a function given at manifold points,
/// computed by pulling the exact volume form back to the mesh. Used by tests
/// and diagnostics as the smooth-surface reference.
pub fn integrate_on_exact_surface(
    mesh: &SurfaceMesh,
    manifold: &ReferenceManifold,
    f: &dyn Fn(&Point3<f64>) -> f64,
    degree: usize,
) -> Result<f64> {
    let rule = quadrature_rule(degree)?;
    let id: Matrix3<f64> = Matrix3::identity();
    let ident = move |_q: &Point3<f64>| id;
    let pb = PulledBackMetric::new(mesh, manifold, &ident);
    let mut total = 0.0;
    for tri in 0..mesh.num_triangles() {
        let mut acc = 0.0;
        for (pt, &w) in rule.points.iter().zip(&rule.weights) {
            let (q, j) = pb.chart_jacobian(tri, *pt);
            let g11 = j[0].dot(&j[0]);
            let g12 = j[0].dot(&j[1]);
            let g22 = j[1].dot(&j[1]);
            let det = g11 * g22 - g12 * g12;
            acc += w * f(&q) * det.sqrt();
        }
        total += acc;
    }
    Ok(total)
}
