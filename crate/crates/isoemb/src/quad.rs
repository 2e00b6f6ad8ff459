//! Quadrature rules on the reference triangle.

use crate::error::{Error, Result};
use crate::poly::gauss_legendre;

/// Quadrature rule on the reference triangle, stored in barycentric
/// coordinates. Weights sum to the reference-triangle area 1/2 and the rule
/// integrates bivariate polynomials exactly up to [`QuadratureRule::degree`].
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    /// Barycentric coordinates (l0, l1, l2) of each point.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reference-triangle coordinates (x, y) = (l1, l2) of each point.
    pub fn xy(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|l| (l[1], l[2]))
    }
}

/// Build a rule exact for polynomials of total degree `degree` (max 30).
///
/// Degrees 0-1 use the centroid rule and degree 2 the symmetric 3-point rule;
/// higher degrees use a collapsed Gauss-Legendre product (Duffy) rule.
pub fn quadrature_rule(degree: usize) -> Result<QuadratureRule> {
    if degree > 30 {
        return Err(Error::UnsupportedDegree { what: "triangle quadrature", got: degree });
    }
    match degree {
        0 | 1 => Ok(QuadratureRule {
            degree,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.5],
        }),
        2 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            Ok(QuadratureRule {
                degree,
                points: vec![[a, b, b], [b, a, b], [b, b, a]],
                weights: vec![1.0 / 6.0; 3],
            })
        }
        d => {
            // x = a (1 - b), y = b with Jacobian (1 - b); the integrand picks up
            // one extra degree in b.
            let na = d.div_ceil(2) + 1;
            let nb = (d + 1).div_ceil(2) + 1;
            let (xa, wa) = gauss_legendre(na);
            let (xb, wb) = gauss_legendre(nb);
            let mut points = Vec::with_capacity(na * nb);
            let mut weights = Vec::with_capacity(na * nb);
            for (&a1, &w1) in xa.iter().zip(&wa) {
                for (&b1, &w2) in xb.iter().zip(&wb) {
                    let a = (a1 + 1.0) / 2.0;
                    let b = (b1 + 1.0) / 2.0;
                    let (x, y) = (a * (1.0 - b), b);
                    points.push([1.0 - x - y, x, y]);
                    weights.push(w1 / 2.0 * w2 / 2.0 * (1.0 - b));
                }
            }
            Ok(QuadratureRule { degree: d, points, weights })
        }
    }
}

/// Gauss-Legendre rule on [0, 1], used for edge moments.
pub fn edge_rule(npoints: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(npoints);
    (
        x.iter().map(|&t| (t + 1.0) / 2.0).collect(),
        w.iter().map(|&wi| wi / 2.0).collect(),
    )
}
