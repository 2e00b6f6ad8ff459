//! Polynomial utilities: Legendre/Jacobi recurrences, Gauss-Legendre nodes,
//! and the orthonormal (Koornwinder) polynomial basis on the reference triangle.
//!
//! The reference triangle is `{(x, y) : x >= 0, y >= 0, x + y <= 1}`. The basis
//! returned by [`TriangleBasis`] is orthonormal with respect to the unweighted
//! integral over that triangle, which keeps nodal and moment Vandermonde
//! matrices well conditioned up to the degrees used in this crate.

/// Legendre polynomial values `P_0..=P_n` at `x`.
pub fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n == 0 {
        return p;
    }
    p.push(x);
    for m in 1..n {
        let next = ((2 * m + 1) as f64 * x * p[m] - m as f64 * p[m - 1]) / (m + 1) as f64;
        p.push(next);
    }
    p
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let p = legendre_all(n, x);
            let dp = n as f64 * (x * p[n] - p[n - 1]) / (x * x - 1.0);
            let dx = p[n] / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let p = legendre_all(n, x);
        let dp = n as f64 * (x * p[n] - p[n - 1]) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Orthonormal polynomial basis of total degree `<= degree` on the reference
/// triangle, with analytic first derivatives.
///
/// Basis functions are ordered by total degree, then by the index `m` of the
/// collapsed-coordinate factor; the ordering is fixed and deterministic.
pub struct TriangleBasis {
    pub degree: usize,
    /// (m, n) index pairs per basis function, m + n <= degree.
    pub index: Vec<(usize, usize)>,
}

impl TriangleBasis {
    pub fn new(degree: usize) -> Self {
        let mut index = Vec::new();
        for d in 0..=degree {
            for m in 0..=d {
                index.push((m, d - m));
            }
        }
        TriangleBasis { degree, index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Values of all basis functions at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> Vec<f64> {
        self.tabulate(x, y).0
    }

    /// Values and gradients `(d/dx, d/dy)` of all basis functions at `(x, y)`.
    ///
    /// The collapsed-coordinate singularity at the apex is removed by carrying
    /// the scaled factor `q_m(u, b) = b^m P_m(u / b)` (a genuine polynomial in
    /// `u = 2x - (1 - y)` and `b = 1 - y`) through the recurrence.
    pub fn tabulate(&self, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let k = self.degree;
        let u = 2.0 * x - (1.0 - y);
        let b = 1.0 - y;

        // q_m and its (x, y) partials: u_x = 2, u_y = 1, b_y = -1.
        let mut q = vec![0.0; k + 1];
        let mut qx = vec![0.0; k + 1];
        let mut qy = vec![0.0; k + 1];
        q[0] = 1.0;
        if k >= 1 {
            q[1] = u;
            qx[1] = 2.0;
            qy[1] = 1.0;
        }
        for m in 1..k {
            let a0 = (2 * m + 1) as f64 / (m + 1) as f64;
            let a1 = m as f64 / (m + 1) as f64;
            q[m + 1] = a0 * u * q[m] - a1 * b * b * q[m - 1];
            qx[m + 1] = a0 * (2.0 * q[m] + u * qx[m]) - a1 * b * b * qx[m - 1];
            qy[m + 1] =
                a0 * (q[m] + u * qy[m]) - a1 * (-2.0 * b * q[m - 1] + b * b * qy[m - 1]);
        }

        let z = 2.0 * y - 1.0;
        let nb = self.len();
        let mut vals = vec![0.0; nb];
        let mut grads = vec![[0.0, 0.0]; nb];
        for (idx, &(m, n)) in self.index.iter().enumerate() {
            let (j, dj) = jacobi_with_deriv(n, (2 * m + 1) as f64, z);
            let djy = dj * 2.0; // dz/dy = 2
            let c = (2.0 * (2 * m + 1) as f64 * (m + n + 1) as f64).sqrt();
            vals[idx] = c * q[m] * j;
            grads[idx] = [c * qx[m] * j, c * (qy[m] * j + q[m] * djy)];
        }
        (vals, grads)
    }
}

/// Jacobi polynomial `P_n^{(alpha, 0)}` and its derivative at `z`.
fn jacobi_with_deriv(n: usize, alpha: f64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut dp_prev = 0.0;
    let mut p = alpha / 2.0 + (alpha + 2.0) / 2.0 * z;
    let mut dp = (alpha + 2.0) / 2.0;
    for m in 2..=n {
        let mf = m as f64;
        let c0 = 2.0 * mf * (mf + alpha) * (2.0 * mf + alpha - 2.0);
        let c1 = 2.0 * mf + alpha - 1.0;
        let c2 = (2.0 * mf + alpha) * (2.0 * mf + alpha - 2.0);
        let c3 = alpha * alpha;
        let c4 = 2.0 * (mf + alpha - 1.0) * (mf - 1.0) * (2.0 * mf + alpha);
        let p_next = (c1 * (c2 * z + c3) * p - c4 * p_prev) / c0;
        let dp_next = (c1 * (c2 * z + c3) * dp + c1 * c2 * p - c4 * dp_prev) / c0;
        p_prev = p;
        dp_prev = dp;
        p = p_next;
        dp = dp_next;
    }
    (p, dp)
}
