//! Velocity saddle-point system: assembly, direct solve, rigid-motion
//! projection and the discrete Korn-constant diagnostic.
//!
//! The system couples `2 (dr ⊙ dv, dr ⊙ dq)` with six rigid-motion constraint
//! rows into a bordered symmetric indefinite matrix, factorized by a sparse
//! LU with the symbolic analysis reused across time steps. All assembly and
//! factorization paths run sequentially, so identical inputs give bitwise
//! identical solutions.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SparseColMatRef, SymbolicSparseColMat};
use nalgebra::{DMatrix, DVector, Matrix2, Vector3};

use crate::error::{Error, Result};
use crate::forms::{inner_vector, MetricContext};
use crate::lagrange::{rigid_motion_basis, FeField, LagrangeSpace};

/// Sparse block system `[A B^T; B 0]` with right-hand side, plus the
/// rigid-motion basis generating the constraint rows.
pub struct SaddleSystem {
    /// Stiffness-like block, `n x n` with `n = 3 dim V_h`.
    pub a: SparseColMat<usize, f64>,
    /// Six dense constraint rows.
    pub b: DMatrix<f64>,
    pub f: DVector<f64>,
    pub rm: [FeField; 6],
    pub mesh_id: u64,
}

pub struct VelocitySolution {
    pub v: FeField,
    /// Multiplier coefficients in the rigid-motion basis.
    pub lambda: [f64; 6],
    /// `||A v + B^T lambda - f||_2`.
    pub residual: f64,
    /// `||B v||_inf` over the six constraint rows.
    pub constraint_residual: f64,
}

/// Caches the sparsity analysis of the stiffness block and of the bordered
/// factorization across repeated assemblies on one space.
#[derive(Default)]
pub struct SaddleWorkspace {
    key: Option<(u64, usize)>,
    a_pattern: Option<(SymbolicSparseColMat<usize>, Argsort<usize>)>,
    bordered: Option<(SymbolicSparseColMat<usize>, Argsort<usize>, SymbolicLu<usize>)>,
}

impl SaddleWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset_if_stale(&mut self, mesh_id: u64, n: usize) {
        if self.key != Some((mesh_id, n)) {
            self.key = Some((mesh_id, n));
            self.a_pattern = None;
            self.bordered = None;
        }
    }

    /// Assemble the velocity system with reference field `r_ref` and forcing
    /// tensor `g_dot` (the time derivative of the target metric).
    pub fn assemble(
        &mut self,
        space: &Arc<LagrangeSpace>,
        r_ref: &FeField,
        g_dot: &dyn crate::refgeom::TensorField,
        ctx: &MetricContext,
    ) -> Result<SaddleSystem> {
        if space.mesh.id() != ctx.mesh_id || r_ref.space.mesh.id() != ctx.mesh_id {
            return Err(Error::MeshMismatch);
        }
        let n = 3 * space.ndof;
        self.reset_if_stale(ctx.mesh_id, n);
        let n_loc = space.n_local();
        let n3 = 3 * n_loc;
        let n_elems = space.mesh.num_triangles();
        let pts: Vec<(f64, f64)> = ctx.rule.xy().collect();
        let (vals, grads) = space.tabulate(&pts);
        let nq = ctx.rule.len();

        let mut f = DVector::zeros(n);
        let mut b = DMatrix::zeros(6, n);
        let mut a_vals: Vec<f64> = Vec::with_capacity(n_elems * n3 * n3);
        let need_pattern = self.a_pattern.is_none();
        let mut pairs: Vec<Pair<usize, usize>> = if need_pattern {
            Vec::with_capacity(n_elems * n3 * n3)
        } else {
            Vec::new()
        };

        let mut local = vec![0.0; n3 * n3];
        let mut m_ops: Vec<Matrix2<f64>> = vec![Matrix2::zeros(); n3];
        let mut n_ops: Vec<Matrix2<f64>> = vec![Matrix2::zeros(); n3];
        for tri in 0..n_elems {
            local.iter_mut().for_each(|x| *x = 0.0);
            let mut local_f = vec![0.0; n3];
            let mut local_b = vec![0.0; 6 * n3];
            for q in 0..nq {
                let (rv, rg) = r_ref.combine_vector(tri, &vals[q], &grads[q]);
                let gram = Matrix2::new(
                    rg[0].dot(&rg[0]),
                    rg[0].dot(&rg[1]),
                    rg[0].dot(&rg[1]),
                    rg[1].dot(&rg[1]),
                );
                let scale = gram.trace();
                if gram.determinant() <= 1e-24 * scale * scale {
                    return Err(Error::DegenerateReference { elem: tri });
                }
                let (_, gi, sd) = ctx.at(tri, q);
                let w = ctx.rule.weights[q] * sd;
                for a in 0..n_loc {
                    let dp = grads[q][a];
                    for c in 0..3 {
                        let rho = [rg[0][c], rg[1][c]];
                        let m = Matrix2::new(
                            rho[0] * dp[0],
                            0.5 * (rho[0] * dp[1] + rho[1] * dp[0]),
                            0.5 * (rho[0] * dp[1] + rho[1] * dp[0]),
                            rho[1] * dp[1],
                        );
                        m_ops[3 * a + c] = m;
                        n_ops[3 * a + c] = gi * m * gi;
                    }
                }
                let gd = g_dot.eval(tri, ctx.rule.points[q]);
                let gd_w = gi * gd * gi;
                let mu: [Vector3<f64>; 6] = [
                    Vector3::x().cross(&rv),
                    Vector3::y().cross(&rv),
                    Vector3::z().cross(&rv),
                    Vector3::x(),
                    Vector3::y(),
                    Vector3::z(),
                ];
                for i in 0..n3 {
                    let mi = &m_ops[i];
                    let ni = &n_ops[i];
                    // Load vector: (g_dot, dr ⊙ dq)_g, no factor 2.
                    local_f[i] += w
                        * (gd_w[(0, 0)] * mi[(0, 0)]
                            + 2.0 * gd_w[(0, 1)] * mi[(0, 1)]
                            + gd_w[(1, 1)] * mi[(1, 1)]);
                    let (a, c) = (i / 3, i % 3);
                    let phi = vals[q][a];
                    for (m_idx, mu_m) in mu.iter().enumerate() {
                        local_b[m_idx * n3 + i] += w * phi * mu_m[c];
                    }
                    for j in i..n3 {
                        let mj = &m_ops[j];
                        let val = 2.0
                            * w
                            * (ni[(0, 0)] * mj[(0, 0)]
                                + 2.0 * ni[(0, 1)] * mj[(0, 1)]
                                + ni[(1, 1)] * mj[(1, 1)]);
                        local[i * n3 + j] += val;
                        if i != j {
                            local[j * n3 + i] += val;
                        }
                    }
                }
            }
            let dofs = &space.elem_dofs[tri];
            for i in 0..n3 {
                let gi = 3 * dofs[i / 3] + i % 3;
                f[gi] += local_f[i];
                for m in 0..6 {
                    b[(m, gi)] += local_b[m * n3 + i];
                }
                for j in 0..n3 {
                    let gj = 3 * dofs[j / 3] + j % 3;
                    if need_pattern {
                        pairs.push(Pair { row: gi, col: gj });
                    }
                    a_vals.push(local[i * n3 + j]);
                }
            }
        }

        if need_pattern {
            let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
                .map_err(|e| Error::SingularSystem(format!("pattern: {e:?}")))?;
            self.a_pattern = Some((symbolic, argsort));
        }
        let (symbolic, argsort) = self.a_pattern.as_ref().unwrap();
        let a = SparseColMat::new_from_argsort(symbolic.clone(), argsort, &a_vals)
            .map_err(|e| Error::SingularSystem(format!("assemble: {e:?}")))?;

        Ok(SaddleSystem { a, b, f, rm: rigid_motion_basis(r_ref), mesh_id: ctx.mesh_id })
    }

    /// Solve the bordered system by sparse LU with partial pivoting, reusing
    /// the symbolic factorization across calls with the same pattern.
    pub fn solve(&mut self, sys: &SaddleSystem) -> Result<VelocitySolution> {
        faer::set_global_parallelism(faer::Par::Seq);
        let n = sys.f.len();
        let dim = n + 6;
        let (bordered_vals, pairs) = bordered_values(sys, self.bordered.is_none());
        if self.bordered.is_none() {
            let (symbolic, argsort) =
                SymbolicSparseColMat::try_new_from_indices(dim, dim, &pairs)
                    .map_err(|e| Error::SingularSystem(format!("bordered pattern: {e:?}")))?;
            let probe = SparseColMat::new_from_argsort(symbolic.clone(), &argsort, &bordered_vals)
                .map_err(|e| Error::SingularSystem(format!("bordered: {e:?}")))?;
            let symbolic_lu = SymbolicLu::try_new(probe.symbolic())
                .map_err(|e| Error::SingularSystem(format!("symbolic LU: {e:?}")))?;
            self.bordered = Some((symbolic, argsort, symbolic_lu));
        }
        let (symbolic, argsort, symbolic_lu) = self.bordered.as_ref().unwrap();
        let k = SparseColMat::new_from_argsort(symbolic.clone(), argsort, &bordered_vals)
            .map_err(|e| Error::SingularSystem(format!("bordered: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic_lu.clone(), k.as_ref())
            .map_err(|e| Error::SingularSystem(format!("LU: {e:?}")))?;
        let mut rhs = faer::Mat::<f64>::zeros(dim, 1);
        for i in 0..n {
            rhs[(i, 0)] = sys.f[i];
        }
        let sol = lu.solve(&rhs);
        let space = sys.rm[0].space.clone();
        let mut v = FeField { space, ncomp: 3, coeffs: vec![0.0; n] };
        for i in 0..n {
            v.coeffs[i] = sol[(i, 0)];
        }
        let lambda = std::array::from_fn(|m| sol[(n + m, 0)]);
        let (residual, constraint_residual) = solution_residuals(sys, &v, &lambda);
        if !residual.is_finite() {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        Ok(VelocitySolution { v, lambda, residual, constraint_residual })
    }
}

/// Bordered-system values (and optionally pairs) in a fixed deterministic
/// order: the A block in CSC order, then B and B^T, then explicit zeros on
/// the trailing diagonal.
fn bordered_values(sys: &SaddleSystem, with_pairs: bool) -> (Vec<f64>, Vec<Pair<usize, usize>>) {
    let n = sys.f.len();
    let a = sys.a.as_ref();
    let nnz = a.val().len();
    let mut vals = Vec::with_capacity(nnz + 12 * n + 6);
    let mut pairs = Vec::with_capacity(if with_pairs { nnz + 12 * n + 6 } else { 0 });
    for j in 0..n {
        for idx in a.col_range(j) {
            vals.push(a.val()[idx]);
            if with_pairs {
                pairs.push(Pair { row: a.row_idx()[idx], col: j });
            }
        }
    }
    for m in 0..6 {
        for j in 0..n {
            let bv = sys.b[(m, j)];
            vals.push(bv);
            vals.push(bv);
            if with_pairs {
                pairs.push(Pair { row: n + m, col: j });
                pairs.push(Pair { row: j, col: n + m });
            }
        }
        vals.push(0.0);
        if with_pairs {
            pairs.push(Pair { row: n + m, col: n + m });
        }
    }
    (vals, pairs)
}

/// Sparse matrix-vector product `y = A x` on the CSC storage.
pub fn spmv(a: SparseColMatRef<'_, usize, f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj != 0.0 {
            for idx in a.col_range(j) {
                y[a.row_idx()[idx]] += a.val()[idx] * xj;
            }
        }
    }
    y
}

fn solution_residuals(sys: &SaddleSystem, v: &FeField, lambda: &[f64; 6]) -> (f64, f64) {
    let n = sys.f.len();
    let x = DVector::from_column_slice(&v.coeffs);
    let mut r = spmv(sys.a.as_ref(), &x) - &sys.f;
    for m in 0..6 {
        for j in 0..n {
            r[j] += sys.b[(m, j)] * lambda[m];
        }
    }
    let mut cres: f64 = 0.0;
    for m in 0..6 {
        let mut s = 0.0;
        for j in 0..n {
            s += sys.b[(m, j)] * x[j];
        }
        cres = cres.max(s.abs());
    }
    (r.norm(), cres)
}

/// One-shot assembly (no pattern reuse).
pub fn assemble_saddle(
    space: &Arc<LagrangeSpace>,
    r_ref: &FeField,
    g_dot: &dyn crate::refgeom::TensorField,
    ctx: &MetricContext,
) -> Result<SaddleSystem> {
    SaddleWorkspace::new().assemble(space, r_ref, g_dot, ctx)
}

/// One-shot solve (no symbolic reuse).
pub fn solve_saddle(sys: &SaddleSystem) -> Result<VelocitySolution> {
    SaddleWorkspace::new().solve(sys)
}

/// Vector mass matrix `(phi_a e_c, phi_b e_d)_{M_h}`.
pub fn assemble_vector_mass(
    space: &Arc<LagrangeSpace>,
    ctx: &MetricContext,
) -> Result<SparseColMat<usize, f64>> {
    if space.mesh.id() != ctx.mesh_id {
        return Err(Error::MeshMismatch);
    }
    let n = 3 * space.ndof;
    let n_loc = space.n_local();
    let pts: Vec<(f64, f64)> = ctx.rule.xy().collect();
    let (vals, _) = space.tabulate(&pts);
    let mut pairs = Vec::new();
    let mut mv = Vec::new();
    for tri in 0..space.mesh.num_triangles() {
        let dofs = &space.elem_dofs[tri];
        let mut local = vec![0.0; n_loc * n_loc];
        for q in 0..ctx.rule.len() {
            let (_, _, sd) = ctx.at(tri, q);
            let w = ctx.rule.weights[q] * sd;
            for a in 0..n_loc {
                for bidx in 0..n_loc {
                    local[a * n_loc + bidx] += w * vals[q][a] * vals[q][bidx];
                }
            }
        }
        for a in 0..n_loc {
            for bidx in 0..n_loc {
                for c in 0..3 {
                    pairs.push(Pair { row: 3 * dofs[a] + c, col: 3 * dofs[bidx] + c });
                    mv.push(local[a * n_loc + bidx]);
                }
            }
        }
    }
    let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
        .map_err(|e| Error::SingularSystem(format!("mass pattern: {e:?}")))?;
    SparseColMat::new_from_argsort(symbolic, &argsort, &mv)
        .map_err(|e| Error::SingularSystem(format!("mass: {e:?}")))
}

/// L2(M_h)-orthogonal projection of `v` onto the rigid-motion space of
/// `r_ref`.
pub fn project_rm(v: &FeField, r_ref: &FeField, ctx: &MetricContext) -> Result<FeField> {
    let (proj, _) = project_rm_with_coeffs(v, r_ref, ctx)?;
    Ok(proj)
}

pub fn project_rm_with_coeffs(
    v: &FeField,
    r_ref: &FeField,
    ctx: &MetricContext,
) -> Result<(FeField, [f64; 6])> {
    let rm = rigid_motion_basis(r_ref);
    let mut gram = DMatrix::zeros(6, 6);
    let mut rhs = DVector::zeros(6);
    for i in 0..6 {
        rhs[i] = inner_vector(v, &rm[i], ctx)?;
        for j in i..6 {
            let g = inner_vector(&rm[i], &rm[j], ctx)?;
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let chol = gram.cholesky().ok_or(Error::GramSingular)?;
    let y = chol.solve(&rhs);
    let mut out = v.space.zero_field(3);
    for m in 0..6 {
        out.add_scaled(y[m], &rm[m]);
    }
    Ok((out, std::array::from_fn(|m| y[m])))
}

/// Smallest constrained generalized singular value
/// `min ||d r_ref ⊙ d v|| / ||v||` over the rigid-motion-orthogonal
/// complement, by inverse power iteration on the bordered pencil.
pub fn korn_constant(
    space: &Arc<LagrangeSpace>,
    r_ref: &FeField,
    ctx: &MetricContext,
) -> Result<f64> {
    faer::set_global_parallelism(faer::Par::Seq);
    let zero = |_t: usize, _b: [f64; 3]| Matrix2::<f64>::zeros();
    let sys = assemble_saddle(space, r_ref, &zero, ctx)?;
    let n = sys.f.len();
    let mass = assemble_vector_mass(space, ctx)?;

    // Bordered matrix with A/2 (the assembled block carries the factor 2).
    let mut half = sys.a.clone();
    for v in half.val_mut() {
        *v *= 0.5;
    }
    let half_sys = SaddleSystem {
        a: half,
        b: sys.b.clone(),
        f: DVector::zeros(n),
        rm: sys.rm,
        mesh_id: sys.mesh_id,
    };
    let dim = n + 6;
    let (vals, pairs) = bordered_values(&half_sys, true);
    let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(dim, dim, &pairs)
        .map_err(|e| Error::SingularSystem(format!("korn pattern: {e:?}")))?;
    let k = SparseColMat::new_from_argsort(symbolic, &argsort, &vals)
        .map_err(|e| Error::SingularSystem(format!("korn: {e:?}")))?;
    let symbolic_lu = SymbolicLu::try_new(k.symbolic())
        .map_err(|e| Error::SingularSystem(format!("korn symbolic: {e:?}")))?;
    let lu = Lu::try_new_with_symbolic(symbolic_lu, k.as_ref())
        .map_err(|e| Error::SingularSystem(format!("korn LU: {e:?}")))?;

    // Deterministic pseudo-random start vector.
    let mut state = 0x2545f4914f6cdd1du64;
    let mut x = DVector::from_fn(n, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    });
    let m_norm = |y: &DVector<f64>| (y.dot(&spmv(mass.as_ref(), y))).max(0.0).sqrt();
    let mut rho_prev = f64::INFINITY;
    for _iter in 0..200 {
        let mx = spmv(mass.as_ref(), &x);
        let mut rhs = faer::Mat::<f64>::zeros(dim, 1);
        for i in 0..n {
            rhs[(i, 0)] = mx[i];
        }
        let sol = lu.solve(&rhs);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            y[i] = sol[(i, 0)];
        }
        let nrm = m_norm(&y);
        if !(nrm > 0.0) {
            return Err(Error::SingularSystem("korn iteration collapsed".into()));
        }
        y /= nrm;
        let ay = spmv(half_sys.a.as_ref(), &y);
        let rho = y.dot(&ay);
        x = y;
        if (rho - rho_prev).abs() <= 1e-8 * rho.abs().max(1e-300) {
            return Ok(rho.max(0.0).sqrt());
        }
        rho_prev = rho;
    }
    Ok(rho_prev.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::l2_norm;
    use crate::lagrange::{build_lagrange_space, interpolate_vector};
    use crate::mesh::build_icosphere;
    use crate::quad::quadrature_rule;
    use crate::refgeom::{project_to_manifold, PulledBackMetric, ReferenceManifold};
    use crate::regge::{build_regge_space, regge_interpolate};
    use nalgebra::{Matrix3, Point3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    struct Setup {
        space: Arc<LagrangeSpace>,
        ctx: MetricContext,
        r: FeField,
    }

    fn sphere_setup(level: usize, k: usize, k_g: usize) -> Setup {
        let mesh = Arc::new(build_icosphere(level).unwrap());
        let man = ReferenceManifold::Sphere;
        let rspace = build_regge_space(mesh.clone(), k_g).unwrap();
        let ident = |_q: &Point3<f64>| Matrix3::identity();
        let pb = PulledBackMetric::new(&mesh, &man, &ident);
        let g = regge_interpolate(&rspace, &pb);
        let ctx = MetricContext::build(&g, quadrature_rule(2 * k + 3).unwrap()).unwrap();
        let space = build_lagrange_space(mesh, k).unwrap();
        let r = interpolate_vector(&space, &|p| man.closest_point(p).unwrap().coords);
        Setup { space, ctx, r }
    }

    #[test]
    fn zero_forcing_gives_zero_velocity() {
        let s = sphere_setup(1, 2, 2);
        let zero = |_t: usize, _b: [f64; 3]| Matrix2::<f64>::zeros();
        let sys = assemble_saddle(&s.space, &s.r, &zero, &s.ctx).unwrap();
        assert!(sys.f.norm() == 0.0);
        let sol = solve_saddle(&sys).unwrap();
        let vnorm = l2_norm(&sol.v, &s.ctx).unwrap();
        assert!(vnorm < 1e-12, "|v| = {vnorm}");
        assert!(sol.lambda.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn stiffness_annihilates_rigid_motions() {
        let s = sphere_setup(1, 3, 3);
        let zero = |_t: usize, _b: [f64; 3]| Matrix2::<f64>::zeros();
        let sys = assemble_saddle(&s.space, &s.r, &zero, &s.ctx).unwrap();
        let scale = sys.a.val().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for mu in &sys.rm {
            let x = DVector::from_column_slice(&mu.coeffs);
            let ax = spmv(sys.a.as_ref(), &x);
            let rel = ax.amax() / scale;
            assert!(rel < 1e-11, "A mu = {rel} of |A|");
        }
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let s = sphere_setup(0, 2, 2);
        let zero = |_t: usize, _b: [f64; 3]| Matrix2::<f64>::zeros();
        let sys = assemble_saddle(&s.space, &s.r, &zero, &s.ctx).unwrap();
        let a = sys.a.as_ref();
        let n = sys.f.len();
        let mut dense = DMatrix::zeros(n, n);
        for j in 0..n {
            for idx in a.col_range(j) {
                dense[(a.row_idx()[idx], j)] = a.val()[idx];
            }
        }
        let scale = dense.amax();
        assert!((&dense - dense.transpose()).amax() <= 1e-13 * scale);
    }

    #[test]
    fn manufactured_solution_recovered() {
        let s = sphere_setup(1, 3, 3);
        let zero = |_t: usize, _b: [f64; 3]| Matrix2::<f64>::zeros();
        let mut ws = SaddleWorkspace::new();
        let sys = ws.assemble(&s.space, &s.r, &zero, &s.ctx).unwrap();
        // Random w constrained to B w = 0 by subtracting its RM projection.
        let mut rng = StdRng::seed_from_u64(42);
        let mut w = s.space.zero_field(3);
        for c in &mut w.coeffs {
            *c = rng.gen_range(-1.0..1.0);
        }
        let proj = project_rm(&w, &s.r, &s.ctx).unwrap();
        w.add_scaled(-1.0, &proj);
        let xw = DVector::from_column_slice(&w.coeffs);
        let manufactured = SaddleSystem {
            f: spmv(sys.a.as_ref(), &xw),
            a: sys.a,
            b: sys.b,
            rm: sys.rm,
            mesh_id: sys.mesh_id,
        };
        let sol = ws.solve(&manufactured).unwrap();
        let diff: f64 = sol
            .v
            .coeffs
            .iter()
            .zip(&w.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = xw.norm();
        assert!(diff <= 1e-9 * scale, "recovery error {diff} vs scale {scale}");
        assert!(sol.constraint_residual <= 1e-10 * scale);
    }

    #[test]
    fn solve_is_deterministic() {
        let s = sphere_setup(1, 2, 2);
        let forcing = |_t: usize, b: [f64; 3]| {
            Matrix2::new(0.3 + b[0], 0.1, 0.1, 0.5 + b[1] * b[2])
        };
        let run = || {
            let sys = assemble_saddle(&s.space, &s.r, &forcing, &s.ctx).unwrap();
            solve_saddle(&sys).unwrap().v.coeffs
        };
        let v1 = run();
        let v2 = run();
        assert_eq!(v1, v2);
    }

    #[test]
    fn projection_properties() {
        let s = sphere_setup(1, 2, 2);
        let rm = rigid_motion_basis(&s.r);
        // A rigid motion is its own projection.
        let mu = FeField::linear_combination(&[(0.7, &rm[1]), (-0.3, &rm[4])]);
        let proj = project_rm(&mu, &s.r, &s.ctx).unwrap();
        let mut diff = proj.clone();
        diff.add_scaled(-1.0, &mu);
        assert!(l2_norm(&diff, &s.ctx).unwrap() <= 1e-12 * l2_norm(&mu, &s.ctx).unwrap());
        // v - P v is orthogonal to the whole basis, and Pythagoras holds.
        let mut rng = StdRng::seed_from_u64(9);
        let mut v = s.space.zero_field(3);
        for c in &mut v.coeffs {
            *c = rng.gen_range(-1.0..1.0);
        }
        let pv = project_rm(&v, &s.r, &s.ctx).unwrap();
        let mut perp = v.clone();
        perp.add_scaled(-1.0, &pv);
        for mu in &rm {
            let ip = inner_vector(&perp, mu, &s.ctx).unwrap();
            assert!(ip.abs() <= 1e-11 * l2_norm(mu, &s.ctx).unwrap());
        }
        let n2v = inner_vector(&v, &v, &s.ctx).unwrap();
        let n2p = inner_vector(&pv, &pv, &s.ctx).unwrap();
        let n2perp = inner_vector(&perp, &perp, &s.ctx).unwrap();
        assert!((n2v - n2p - n2perp).abs() <= 1e-10 * n2v);
        // Projecting the orthogonal part returns (numerically) zero.
        let pperp = project_rm(&perp, &s.r, &s.ctx).unwrap();
        assert!(l2_norm(&pperp, &s.ctx).unwrap() <= 1e-10 * l2_norm(&v, &s.ctx).unwrap());
    }

    #[test]
    fn rigid_motion_gram_has_rank_six() {
        let s = sphere_setup(0, 2, 2);
        let rm = rigid_motion_basis(&s.r);
        let mut gram = DMatrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                gram[(i, j)] = inner_vector(&rm[i], &rm[j], &s.ctx).unwrap();
            }
        }
        let eig = gram.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 1e-8), "eigenvalues {eig:?}");
    }

    #[test]
    fn korn_scales_linearly_with_reference() {
        let s = sphere_setup(0, 2, 2);
        let k1 = korn_constant(&s.space, &s.r, &s.ctx).unwrap();
        assert!(k1 > 0.0);
        let mut r2 = s.r.clone();
        r2.scale(2.0);
        let k2 = korn_constant(&s.space, &r2, &s.ctx).unwrap();
        assert!((k2 - 2.0 * k1).abs() <= 1e-6 * k1, "k1 = {k1}, k2 = {k2}");
    }

    #[test]
    fn korn_matches_dense_eigen_oracle() {
        let s = sphere_setup(0, 3, 3);
        let fast = korn_constant(&s.space, &s.r, &s.ctx).unwrap();
        // Dense oracle: restrict the pencil (A/2, M) to an orthonormal basis
        // of the nullspace of B and take the smallest eigenvalue.
        let zero = |_t: usize, _b: [f64; 3]| Matrix2::<f64>::zeros();
        let sys = assemble_saddle(&s.space, &s.r, &zero, &s.ctx).unwrap();
        let mass = assemble_vector_mass(&s.space, &s.ctx).unwrap();
        let n = sys.f.len();
        let mut a_half = DMatrix::zeros(n, n);
        for j in 0..n {
            for idx in sys.a.as_ref().col_range(j) {
                a_half[(sys.a.as_ref().row_idx()[idx], j)] = 0.5 * sys.a.as_ref().val()[idx];
            }
        }
        let mut m_dense = DMatrix::zeros(n, n);
        for j in 0..n {
            for idx in mass.as_ref().col_range(j) {
                m_dense[(mass.as_ref().row_idx()[idx], j)] = mass.as_ref().val()[idx];
            }
        }
        // Nullspace basis by Gram-Schmidt against the 6 constraint rows.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for m in 0..6 {
            let mut v = sys.b.row(m).transpose().clone_owned();
            for b in &basis {
                let d = v.dot(b);
                v -= b * d;
            }
            v /= v.norm();
            basis.push(v);
        }
        let mut z = DMatrix::zeros(n, n - 6);
        let mut col = 0;
        for i in 0..n {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            for b in &basis {
                let d = v.dot(b);
                v -= b * d;
            }
            let nrm = v.norm();
            if nrm > 1e-6 {
                v /= nrm;
                basis.push(v.clone());
                z.set_column(col, &v);
                col += 1;
                if col == n - 6 {
                    break;
                }
            }
        }
        assert_eq!(col, n - 6);
        let az = z.transpose() * &a_half * &z;
        let mz = z.transpose() * &m_dense * &z;
        let chol = mz.cholesky().unwrap();
        let linv = chol.l().try_inverse().unwrap();
        let sym = &linv * az * linv.transpose();
        let eig = sym.symmetric_eigenvalues();
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let oracle = min_eig.max(0.0).sqrt();
        assert!(
            (fast - oracle).abs() <= 1e-6 * oracle,
            "iterative {fast} vs dense {oracle}"
        );
    }

    #[test]
    fn ellipsoid_flow_solve_satisfies_constraints() {
        // Forcing from a genuine metric velocity on the ellipsoid; the
        // solved velocity must be orthogonal to all rigid motions and the
        // multiplier must vanish to roundoff.
        let man = ReferenceManifold::Ellipsoid([0.5, 0.5, 1.0]);
        let base = build_icosphere(1).unwrap();
        let mesh = Arc::new(project_to_manifold(&base, &man).unwrap());
        let k = 3usize;
        let rspace = build_regge_space(mesh.clone(), k).unwrap();
        let ident = |_q: &Point3<f64>| Matrix3::identity();
        let pb = PulledBackMetric::new(&mesh, &man, &ident);
        let g = regge_interpolate(&rspace, &pb);
        let ctx = MetricContext::build(&g, quadrature_rule(2 * k + 3).unwrap()).unwrap();
        let space = build_lagrange_space(mesh.clone(), k).unwrap();
        let r = interpolate_vector(&space, &|p| man.closest_point(p).unwrap().coords);
        // d/dt of the target metric at t = 0 for the shrinking-axes flow.
        let gdot3 = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, -4.0 / 3.0));
        let gdot_fn = move |_q: &Point3<f64>| gdot3;
        let gdot_pb = PulledBackMetric::new(&mesh, &man, &gdot_fn);
        let gdot = regge_interpolate(&rspace, &gdot_pb);
        let sys = assemble_saddle(&space, &r, &gdot, &ctx).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        let vnorm = l2_norm(&sol.v, &ctx).unwrap();
        assert!(vnorm > 0.1, "velocity should be nontrivial: {vnorm}");
        for (m, mu) in sys.rm.iter().enumerate() {
            let ip = inner_vector(&sol.v, mu, &ctx).unwrap();
            let scale = vnorm * l2_norm(mu, &ctx).unwrap();
            assert!(ip.abs() <= 1e-10 * scale, "row {m}: {ip}");
        }
        let fscale = sys.f.norm();
        let lnorm = sol.lambda.iter().map(|l| l * l).sum::<f64>().sqrt();
        assert!(lnorm <= 1e-8 * fscale, "lambda {lnorm} vs f {fscale}");
    }
}
