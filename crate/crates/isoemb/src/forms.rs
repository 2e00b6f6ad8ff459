//! Pointwise and integrated geometric quantities.
//!
//! All finite element integrals are taken with respect to the fixed reference
//! metric `g_Mh`; the evolving target metric never enters the volume form. A
//! [`MetricContext`] caches the metric, its inverse and the volume factor at
//! every quadrature point of every element. Integration reduces per-element
//! sums in element-index order with pairwise summation, so results are
//! bit-reproducible.

use nalgebra::{Matrix2, Vector3};

use crate::error::{Error, Result};
use crate::lagrange::FeField;
use crate::quad::QuadratureRule;
use crate::refgeom::TensorField;
use crate::regge::DiscreteMetric;

pub struct MetricContext {
    pub mesh_id: u64,
    pub rule: QuadratureRule,
    /// Flattened per-element, per-point cache.
    pub g: Vec<Matrix2<f64>>,
    pub g_inv: Vec<Matrix2<f64>>,
    pub sqrt_det: Vec<f64>,
    pub n_elems: usize,
}

impl MetricContext {
    /// Build the cache from the reference metric; fails if the metric is not
    /// positive definite at some quadrature point.
    pub fn build(metric: &DiscreteMetric, rule: QuadratureRule) -> Result<MetricContext> {
        let mesh = &metric.space.mesh;
        let n_elems = mesh.num_triangles();
        let n_q = rule.len();
        let mut g = Vec::with_capacity(n_elems * n_q);
        let mut g_inv = Vec::with_capacity(n_elems * n_q);
        let mut sqrt_det = Vec::with_capacity(n_elems * n_q);
        for tri in 0..n_elems {
            for pt in &rule.points {
                let m = metric.eval(tri, *pt);
                let det = m.determinant();
                let tr = m.trace();
                let min_eig = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
                if !(min_eig > 0.0) {
                    return Err(Error::MetricNotPositive { elem: tri, eig: min_eig });
                }
                g_inv.push(m.try_inverse().ok_or(Error::MetricNotPositive {
                    elem: tri,
                    eig: min_eig,
                })?);
                sqrt_det.push(det.sqrt());
                g.push(m);
            }
        }
        Ok(MetricContext { mesh_id: mesh.id(), rule, g, g_inv, sqrt_det, n_elems })
    }

    pub fn n_points(&self) -> usize {
        self.rule.len()
    }

    #[inline]
    pub fn at(&self, tri: usize, q: usize) -> (&Matrix2<f64>, &Matrix2<f64>, f64) {
        let idx = tri * self.rule.len() + q;
        (&self.g[idx], &self.g_inv[idx], self.sqrt_det[idx])
    }

    fn check_field(&self, f: &FeField) -> Result<()> {
        if f.space.mesh.id() != self.mesh_id {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }
}

/// Symmetrized product of two chart gradients:
/// `(dr ⊙ dv)_ij = (∂_i r · ∂_j v + ∂_j r · ∂_i v) / 2`.
#[inline]
pub fn d_odot(grad_r: &[Vector3<f64>; 2], grad_v: &[Vector3<f64>; 2]) -> Matrix2<f64> {
    let a00 = grad_r[0].dot(&grad_v[0]);
    let a11 = grad_r[1].dot(&grad_v[1]);
    let a01 = 0.5 * (grad_r[0].dot(&grad_v[1]) + grad_r[1].dot(&grad_v[0]));
    Matrix2::new(a00, a01, a01, a11)
}

/// Metric inner product of symmetric tensors: `g^{ik} g^{jl} s_ij w_kl`.
#[inline]
pub fn tensor_dot(g_inv: &Matrix2<f64>, s: &Matrix2<f64>, w: &Matrix2<f64>) -> f64 {
    (g_inv * s * g_inv * w).trace()
}

/// Deterministic pairwise reduction in index order.
pub fn pairwise_sum(mut vals: Vec<f64>) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    while vals.len() > 1 {
        let half = vals.len().div_ceil(2);
        for i in 0..vals.len() / 2 {
            vals[i] = vals[2 * i] + vals[2 * i + 1];
        }
        if vals.len() % 2 == 1 {
            vals[half - 1] = vals[vals.len() - 1];
        }
        vals.truncate(half);
    }
    vals[0]
}

fn integrate_elements(ctx: &MetricContext, mut elem_fn: impl FnMut(usize) -> f64) -> f64 {
    pairwise_sum((0..ctx.n_elems).map(&mut elem_fn).collect())
}

/// L2(M_h) inner product of two vector fields.
pub fn inner_vector(u: &FeField, v: &FeField, ctx: &MetricContext) -> Result<f64> {
    ctx.check_field(u)?;
    ctx.check_field(v)?;
    let pts: Vec<(f64, f64)> = ctx.rule.xy().collect();
    let (vals_u, grads_u) = u.space.tabulate(&pts);
    let same_space = std::ptr::eq(u.space.as_ref(), v.space.as_ref());
    let (vals_v, grads_v) = if same_space {
        (Vec::new(), Vec::new())
    } else {
        v.space.tabulate(&pts)
    };
    Ok(integrate_elements(ctx, |tri| {
        let mut acc = 0.0;
        for q in 0..ctx.n_points() {
            let (uu, _) = u.combine_vector(tri, &vals_u[q], &grads_u[q]);
            let (vv, _) = if same_space {
                v.combine_vector(tri, &vals_u[q], &grads_u[q])
            } else {
                v.combine_vector(tri, &vals_v[q], &grads_v[q])
            };
            let (_, _, sd) = ctx.at(tri, q);
            acc += ctx.rule.weights[q] * sd * uu.dot(&vv);
        }
        acc
    }))
}

/// L2(M_h) inner product of two tensor fields.
pub fn inner_tensor(
    sigma: &dyn TensorField,
    omega: &dyn TensorField,
    ctx: &MetricContext,
) -> f64 {
    let pts: Vec<[f64; 3]> = ctx.rule.points.clone();
    integrate_elements(ctx, |tri| {
        let mut acc = 0.0;
        for (q, pt) in pts.iter().enumerate() {
            let s = sigma.eval(tri, *pt);
            let w = omega.eval(tri, *pt);
            let (_, gi, sd) = ctx.at(tri, q);
            acc += ctx.rule.weights[q] * sd * tensor_dot(gi, &s, &w);
        }
        acc
    })
}

/// L2(M_h) norm of a 3-component field.
pub fn l2_norm(v: &FeField, ctx: &MetricContext) -> Result<f64> {
    Ok(inner_vector(v, v, ctx)?.max(0.0).sqrt())
}

/// Squared L2 norm of `d r_star ⊙ d e` plus the plain L2 norm of `e`, i.e.
/// the discrete graph norm associated with the reference field `r_star`.
pub fn graph_norm(e: &FeField, r_star: &FeField, ctx: &MetricContext) -> Result<f64> {
    let (l2, d) = graph_norm_parts(e, r_star, ctx)?;
    Ok((l2 * l2 + d * d).sqrt())
}

/// The (L2, D-term) parts of the discrete graph norm.
pub fn graph_norm_parts(e: &FeField, r_star: &FeField, ctx: &MetricContext) -> Result<(f64, f64)> {
    ctx.check_field(e)?;
    ctx.check_field(r_star)?;
    let pts: Vec<(f64, f64)> = ctx.rule.xy().collect();
    let (vals, grads) = e.space.tabulate(&pts);
    let l2_sq = integrate_elements(ctx, |tri| {
        let mut acc = 0.0;
        for q in 0..ctx.n_points() {
            let (ev, _) = e.combine_vector(tri, &vals[q], &grads[q]);
            let (_, _, sd) = ctx.at(tri, q);
            acc += ctx.rule.weights[q] * sd * ev.dot(&ev);
        }
        acc
    });
    let d_sq = integrate_elements(ctx, |tri| {
        let mut acc = 0.0;
        for q in 0..ctx.n_points() {
            let (_, ge) = e.combine_vector(tri, &vals[q], &grads[q]);
            let (_, gr) = r_star.combine_vector(tri, &vals[q], &grads[q]);
            let dd = d_odot(&gr, &ge);
            let (_, gi, sd) = ctx.at(tri, q);
            acc += ctx.rule.weights[q] * sd * tensor_dot(gi, &dd, &dd);
        }
        acc
    });
    Ok((l2_sq.max(0.0).sqrt(), d_sq.max(0.0).sqrt()))
}

/// `|| dr ⊙ dr - g_target ||_{L2(M_h)}`.
pub fn isometry_residual(
    r: &FeField,
    g_target: &dyn TensorField,
    ctx: &MetricContext,
) -> Result<f64> {
    ctx.check_field(r)?;
    let pts: Vec<(f64, f64)> = ctx.rule.xy().collect();
    let (vals, grads) = r.space.tabulate(&pts);
    let bary: Vec<[f64; 3]> = ctx.rule.points.clone();
    let total = integrate_elements(ctx, |tri| {
        let mut acc = 0.0;
        for q in 0..ctx.n_points() {
            let (_, gr) = r.combine_vector(tri, &vals[q], &grads[q]);
            let diff = d_odot(&gr, &gr) - g_target.eval(tri, bary[q]);
            let (_, gi, sd) = ctx.at(tri, q);
            acc += ctx.rule.weights[q] * sd * tensor_dot(gi, &diff, &diff);
        }
        acc
    });
    Ok(total.max(0.0).sqrt())
}
