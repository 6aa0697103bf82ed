//! Feasible-set manifolds `M = {R : B(R^T R) = b0}` for the three supported
//! domains: trace-constrained (scaled Frobenius sphere), unit diagonal
//! (oblique manifold) and identity diagonal blocks (products of Stiefel
//! manifolds).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Result, SdpError};
use crate::linmap::{validate_bounds, Factor, SymLinearMap, SymSum, SymTerm};

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldDescriptor {
    /// `tr(X) = radius_sq`, i.e. `||R||_F^2 = radius_sq`.
    FrobSphere { n: usize, radius_sq: f64 },
    /// `diag(X) = e`, unit-norm columns.
    Oblique { n: usize },
    /// Diagonal blocks of `X` equal to identities; `bounds = [0, i_1, ..., n]`.
    BlockOrthonormal { n: usize, bounds: Vec<usize> },
}

impl ManifoldDescriptor {
    pub fn sphere(n: usize) -> Self {
        ManifoldDescriptor::FrobSphere { n, radius_sq: 1.0 }
    }

    pub fn scaled_sphere(n: usize, radius_sq: f64) -> Result<Self> {
        if !(radius_sq > 0.0) || !radius_sq.is_finite() {
            return Err(SdpError::InvalidParameter(format!(
                "sphere trace must be positive, got {radius_sq}"
            )));
        }
        Ok(ManifoldDescriptor::FrobSphere { n, radius_sq })
    }

    pub fn oblique(n: usize) -> Self {
        ManifoldDescriptor::Oblique { n }
    }

    pub fn block_orthonormal(n: usize, bounds: Vec<usize>) -> Result<Self> {
        validate_bounds(n, &bounds)?;
        Ok(ManifoldDescriptor::BlockOrthonormal { n, bounds })
    }

    pub fn n(&self) -> usize {
        match self {
            ManifoldDescriptor::FrobSphere { n, .. }
            | ManifoldDescriptor::Oblique { n }
            | ManifoldDescriptor::BlockOrthonormal { n, .. } => *n,
        }
    }

    /// The constraint map `B`.
    pub fn constraint_map(&self) -> SymLinearMap {
        match self {
            ManifoldDescriptor::FrobSphere { n, .. } => SymLinearMap::Trace { n: *n },
            ManifoldDescriptor::Oblique { n } => SymLinearMap::Diag { n: *n },
            ManifoldDescriptor::BlockOrthonormal { n, bounds } => SymLinearMap::BlockIdentity {
                n: *n,
                bounds: bounds.clone(),
            },
        }
    }

    /// Right-hand side `b0`; block-major, row-major inside each block.
    pub fn rhs(&self) -> DVector<f64> {
        match self {
            ManifoldDescriptor::FrobSphere { radius_sq, .. } => DVector::from_element(1, *radius_sq),
            ManifoldDescriptor::Oblique { n } => DVector::from_element(*n, 1.0),
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => {
                let mut out = Vec::new();
                for w in bounds.windows(2) {
                    for i in w[0]..w[1] {
                        for j in i..w[1] {
                            out.push(if i == j { 1.0 } else { 0.0 });
                        }
                    }
                }
                DVector::from_vec(out)
            }
        }
    }

    /// Number of manifold constraints `m0`.
    pub fn m0(&self) -> usize {
        self.constraint_map().m()
    }

    /// Smallest admissible factor rank.
    pub fn min_rank(&self) -> usize {
        match self {
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => {
                bounds.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(1)
            }
            _ => 1,
        }
    }

    /// `max_{X in D} tr(X)`.
    pub fn diameter(&self) -> f64 {
        match self {
            ManifoldDescriptor::FrobSphere { radius_sq, .. } => *radius_sq,
            ManifoldDescriptor::Oblique { n } | ManifoldDescriptor::BlockOrthonormal { n, .. } => {
                *n as f64
            }
        }
    }

    /// Whether the identity lies in the span of the constraint matrices.
    /// True for all three variants.
    pub fn identity_in_span(&self) -> bool {
        true
    }

    /// `||B(R^T R) - b0||_inf`.
    pub fn feasibility_residual(&self, r: &Factor) -> Result<f64> {
        let lhs = self.constraint_map().apply_factored(r)?;
        Ok((lhs - self.rhs()).amax())
    }

    /// A deterministic random point: Gaussian entries mapped onto the manifold.
    pub fn random_point(&self, p: usize, seed: u64) -> Result<Factor> {
        if p == 0 {
            return Err(SdpError::InvalidParameter("factor rank must be positive".into()));
        }
        if p < self.min_rank() {
            return Err(SdpError::InvalidParameter(format!(
                "rank {p} below the largest block size {}",
                self.min_rank()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(p, self.n(), |_, _| StandardNormal.sample(&mut rng));
        self.normalize(&g)
    }

    /// Maps an arbitrary `p x n` matrix onto the manifold with the retraction's
    /// normalization (sphere scaling, column normalization or per-block polar factor).
    pub fn normalize(&self, y: &Factor) -> Result<Factor> {
        check_dim("normalize", self.n(), y.ncols())?;
        match self {
            ManifoldDescriptor::FrobSphere { radius_sq, .. } => {
                let nrm = y.norm();
                if !(nrm > 0.0) || !nrm.is_finite() {
                    return Err(SdpError::DegenerateBlock { block: 0, min_eig: nrm });
                }
                Ok(y * (radius_sq.sqrt() / nrm))
            }
            ManifoldDescriptor::Oblique { n } => {
                let p = y.nrows();
                let mut out = y.clone();
                for i in 0..*n {
                    let nrm = out.column(i).norm();
                    if !nrm.is_finite() {
                        return Err(SdpError::NonFinite(format!("column {i} in retraction")));
                    }
                    if nrm == 0.0 {
                        let mut col = out.column_mut(i);
                        col.fill(0.0);
                        col[i % p] = 1.0;
                    } else {
                        out.column_mut(i).scale_mut(1.0 / nrm);
                    }
                }
                Ok(out)
            }
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => {
                let mut out = y.clone();
                for (b, w) in bounds.windows(2).enumerate() {
                    let d = w[1] - w[0];
                    let yb = y.columns(w[0], d).clone_owned();
                    let polar = polar_factor(&yb).map_err(|min_eig| SdpError::DegenerateBlock {
                        block: b,
                        min_eig,
                    })?;
                    out.columns_mut(w[0], d).copy_from(&polar);
                }
                Ok(out)
            }
        }
    }

    /// Orthogonal projection onto `T_R M = {U : B(R^T U + U^T R) = 0}`.
    pub fn project_tangent(&self, r: &Factor, v: &Factor) -> Result<Factor> {
        check_dim("project_tangent", r.nrows(), v.nrows())?;
        check_dim("project_tangent", r.ncols(), v.ncols())?;
        check_dim("project_tangent", self.n(), r.ncols())?;
        let mut out = v.clone();
        match self {
            ManifoldDescriptor::FrobSphere { .. } => {
                let rr = r.norm_squared();
                out -= r * (r.dot(v) / rr);
            }
            ManifoldDescriptor::Oblique { n } => {
                for i in 0..*n {
                    let ri = r.column(i);
                    let c = ri.dot(&v.column(i)) / ri.norm_squared();
                    out.column_mut(i).axpy(-c, &ri, 1.0);
                }
            }
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => {
                for w in bounds.windows(2) {
                    let d = w[1] - w[0];
                    let rb = r.columns(w[0], d);
                    let vb = v.columns(w[0], d);
                    let m = rb.transpose() * vb;
                    let sym = (&m + m.transpose()) * 0.5;
                    let mut ob = out.columns_mut(w[0], d);
                    ob.gemm(-1.0, &rb, &sym, 1.0);
                }
            }
        }
        Ok(out)
    }

    /// `B(R^T U + U^T R)`; zero for tangent `U`.
    pub fn tangent_residual(&self, r: &Factor, u: &Factor) -> Result<DVector<f64>> {
        self.constraint_map().apply_sym_product(u, r)
    }

    /// Retraction `R_R(U)`: normalization of `R + U`.
    pub fn retract(&self, r: &Factor, u: &Factor) -> Result<Factor> {
        check_dim("retract", r.nrows(), u.nrows())?;
        check_dim("retract", r.ncols(), u.ncols())?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(SdpError::NonFinite("retraction direction".into()));
        }
        self.normalize(&(r + u))
    }

    /// Solves `B(X (G - B^*(u))) = 0` for `u`, given `R G` where `X = R^T R`.
    pub fn solve_u(&self, r: &Factor, rg: &Factor) -> Result<DVector<f64>> {
        check_dim("solve_u", r.nrows(), rg.nrows())?;
        check_dim("solve_u", r.ncols(), rg.ncols())?;
        match self {
            ManifoldDescriptor::FrobSphere { .. } => {
                let tr = r.norm_squared();
                if !(tr > 0.0) {
                    return Err(SdpError::SingularSystem { condition: f64::INFINITY });
                }
                Ok(DVector::from_element(1, r.dot(rg) / tr))
            }
            ManifoldDescriptor::Oblique { n } => {
                let mut u = DVector::zeros(*n);
                for i in 0..*n {
                    let xii = r.column(i).norm_squared();
                    if !(xii > 0.0) {
                        return Err(SdpError::SingularSystem { condition: f64::INFINITY });
                    }
                    u[i] = r.column(i).dot(&rg.column(i)) / xii;
                }
                Ok(u)
            }
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => {
                let mut out = Vec::with_capacity(self.m0());
                for w in bounds.windows(2) {
                    let d = w[1] - w[0];
                    let rb = r.columns(w[0], d);
                    let a = rb.transpose() * rg.columns(w[0], d);
                    let xjj = rb.transpose() * rb;
                    let lam = solve_lyapunov(&xjj, &(&a + a.transpose()))?;
                    for i in 0..d {
                        for j in i..d {
                            out.push(if i == j { lam[(i, i)] } else { 2.0 * lam[(i, j)] });
                        }
                    }
                }
                Ok(DVector::from_vec(out))
            }
        }
    }

    /// `B^*(u)` as a structured term.
    pub fn adjoint_term(&self, u: &DVector<f64>) -> SymTerm<'static> {
        match self {
            ManifoldDescriptor::FrobSphere { .. } => SymTerm::Identity(u[0]),
            ManifoldDescriptor::Oblique { .. } => SymTerm::Diag(u.clone()),
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => SymTerm::Blocks {
                bounds: bounds.clone(),
                blocks: self.multiplier_blocks(u),
            },
        }
    }

    /// Symmetric block matrices `Lambda_j` with `B^*(u) = blockdiag(Lambda_j)`.
    pub fn multiplier_blocks(&self, u: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match self {
            ManifoldDescriptor::BlockOrthonormal { bounds, .. } => {
                let mut k = 0;
                bounds
                    .windows(2)
                    .map(|w| {
                        let d = w[1] - w[0];
                        let mut lam = DMatrix::zeros(d, d);
                        for i in 0..d {
                            for j in i..d {
                                if i == j {
                                    lam[(i, i)] = u[k];
                                } else {
                                    lam[(i, j)] = 0.5 * u[k];
                                    lam[(j, i)] = 0.5 * u[k];
                                }
                                k += 1;
                            }
                        }
                        lam
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// `out += coef * R B^*(u)`.
    pub fn add_r_adjoint(&self, r: &Factor, u: &DVector<f64>, coef: f64, out: &mut Factor) -> Result<()> {
        let mut s = SymSum::new(self.n());
        s.push(self.adjoint_term(u));
        s.add_right_mul(r, coef, out)
    }

    /// Riemannian gradient `egrad - 2 R B^*(u)`.
    pub fn riem_grad(&self, r: &Factor, egrad: &Factor, u: &DVector<f64>) -> Result<Factor> {
        check_dim("riem_grad", r.nrows(), egrad.nrows())?;
        check_dim("riem_grad", r.ncols(), egrad.ncols())?;
        check_dim("riem_grad", self.m0(), u.len())?;
        let mut g = egrad.clone();
        self.add_r_adjoint(r, u, -2.0, &mut g)?;
        Ok(g)
    }

    /// Generalized Riemannian Hessian applied to a tangent `U`:
    /// `P_T(2 U S + 2 R (M - B^*(u')))` where `S = grad Phi - B^*(u)`,
    /// `hess_phi_r = R M` with `M` the generalized Hessian of `Phi` applied to
    /// `U^T R + R^T U`, and `u'` solves `B(X (M - B^*(u'))) = 0`.
    pub fn riem_hess_vec(
        &self,
        r: &Factor,
        u_dir: &Factor,
        s_op: &SymSum<'_>,
        hess_phi_r: &Factor,
    ) -> Result<Factor> {
        let u_prime = self.solve_u(r, hess_phi_r)?;
        let mut out = hess_phi_r * 2.0;
        self.add_r_adjoint(r, &u_prime, -2.0, &mut out)?;
        s_op.add_right_mul(u_dir, 2.0, &mut out)?;
        self.project_tangent(r, &out)
    }
}

/// `Y (Y^T Y)^{-1/2}`; on failure returns the smallest Gram eigenvalue.
fn polar_factor(y: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let gram = y.transpose() * y;
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-14 * max.max(1e-300)) || !min.is_finite() {
        return Err(min);
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(y * (&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose()))
}

/// Solves `X L + L X = C` for symmetric `L`, `X` symmetric positive definite.
fn solve_lyapunov(x: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(x.clone());
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let max = lam.amax();
    let min = lam.min();
    if !(min > 1e-13 * max) {
        return Err(SdpError::SingularSystem {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let mut ct = q.transpose() * c * q;
    let d = lam.len();
    for i in 0..d {
        for j in 0..d {
            ct[(i, j)] /= lam[i] + lam[j];
        }
    }
    Ok(q * ct * q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmap::SymMatrix;
    use rand::Rng;

    fn variants() -> Vec<(ManifoldDescriptor, usize)> {
        vec![
            (ManifoldDescriptor::sphere(6), 3),
            (ManifoldDescriptor::scaled_sphere(6, 2.5).unwrap(), 3),
            (ManifoldDescriptor::oblique(6), 3),
            (ManifoldDescriptor::block_orthonormal(6, vec![0, 2, 3, 6]).unwrap(), 4),
        ]
    }

    fn rand_mat(p: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = rand_mat(n, n, rng);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn random_points_are_feasible() {
        let m = ManifoldDescriptor::sphere(5);
        let r = m.random_point(3, 1).unwrap();
        assert!((r.norm() - 1.0).abs() < 1e-14);
        let m = ManifoldDescriptor::oblique(4);
        let r = m.random_point(3, 2).unwrap();
        for i in 0..4 {
            assert!((r.column(i).norm() - 1.0).abs() < 1e-14);
        }
        let m = ManifoldDescriptor::block_orthonormal(4, vec![0, 2, 4]).unwrap();
        let r = m.random_point(3, 3).unwrap();
        for b in 0..2 {
            let blk = r.columns(2 * b, 2);
            assert!((blk.transpose() * blk - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
        }
        // same seed, same point
        assert_eq!(m.random_point(3, 3).unwrap(), r);
        assert!(m.random_point(1, 0).is_err());
    }

    #[test]
    fn block_point_spans_same_space_as_qr_of_gaussian() {
        // QR oracle: the polar factor and the Q factor of the same Gaussian
        // block span the same column space.
        let m = ManifoldDescriptor::block_orthonormal(4, vec![0, 2, 4]).unwrap();
        let r = m.random_point(3, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = DMatrix::<f64>::from_fn(3, 4, |_, _| StandardNormal.sample(&mut rng));
        for b in 0..2 {
            let q = g.columns(2 * b, 2).clone_owned().qr().q();
            let blk = r.columns(2 * b, 2).clone_owned();
            let proj = &q * q.transpose() * &blk;
            assert!((proj - blk).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (m, p) in variants() {
            let r = m.random_point(p, 9).unwrap();
            let v = rand_mat(p, m.n(), &mut rng);
            let w = rand_mat(p, m.n(), &mut rng);
            let u = m.project_tangent(&r, &v).unwrap();
            assert!(m.tangent_residual(&r, &u).unwrap().amax() < 1e-12, "{m:?}");
            let uu = m.project_tangent(&r, &u).unwrap();
            assert!((&uu - &u).amax() < 1e-12);
            let pw = m.project_tangent(&r, &w).unwrap();
            assert!((pw.dot(&v) - u.dot(&w)).abs() < 1e-12);
        }
        let m = ManifoldDescriptor::sphere(4);
        let r = m.random_point(2, 0).unwrap();
        assert!(m.project_tangent(&r, &r).unwrap().amax() < 1e-14);
    }

    #[test]
    fn retraction_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (m, p) in variants() {
            let r = m.random_point(p, 1).unwrap();
            let zero = DMatrix::zeros(p, m.n());
            let r0 = m.retract(&r, &zero).unwrap();
            assert!((&r0 - &r).amax() < 1e-14);
            let u = m.project_tangent(&r, &rand_mat(p, m.n(), &mut rng)).unwrap();
            let err = |t: f64| (m.retract(&r, &(&u * t)).unwrap() - &r - &u * t).norm();
            let (e1, e2) = (err(1e-2), err(5e-3));
            let ratio = e1 / e2;
            assert!((ratio - 4.0).abs() < 0.2, "{m:?}: ratio {ratio}");
            assert!(err(1e-3) / 1e-6 < 10.0 * (1.0 + u.norm_squared()));
            let moved = m.retract(&r, &u).unwrap();
            assert!(m.feasibility_residual(&moved).unwrap() < 1e-12);
        }
    }

    #[test]
    fn oblique_zero_column_is_replaced_deterministically() {
        let m = ManifoldDescriptor::oblique(3);
        let r = m.random_point(2, 0).unwrap();
        let mut u = DMatrix::zeros(2, 3);
        u.column_mut(1).copy_from(&(-r.column(1)));
        let out = m.retract(&r, &u).unwrap();
        assert_eq!(out.column(1).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn degenerate_block_is_signaled() {
        let m = ManifoldDescriptor::block_orthonormal(2, vec![0, 2]).unwrap();
        let r = m.random_point(2, 0).unwrap();
        let mut y = r.clone();
        let c0 = y.column(0).clone_owned();
        y.column_mut(1).copy_from(&c0);
        assert!(matches!(m.normalize(&y), Err(SdpError::DegenerateBlock { .. })));
    }

    #[test]
    fn solve_u_examples() {
        let m = ManifoldDescriptor::sphere(3);
        let r = m.random_point(2, 4).unwrap();
        let g = SymMatrix::identity(3);
        let u = m.solve_u(&r, &g.right_mul(&r)).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-14);

        let m = ManifoldDescriptor::oblique(2);
        let r = DMatrix::<f64>::identity(2, 2);
        let g = SymMatrix::sparse(2, vec![(1, 0, 1.0)]).unwrap();
        let u = m.solve_u(&r, &g.right_mul(&r)).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn solve_u_defining_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (m, p) in variants() {
            let r = m.random_point(p, 2).unwrap();
            let g = rand_sym(m.n(), &mut rng);
            let u = m.solve_u(&r, &(&r * &g)).unwrap();
            let mut s = g.clone();
            m.constraint_map().add_adjoint_dense(&u, -1.0, &mut s).unwrap();
            let x = r.transpose() * &r;
            let xs = &x * &s;
            let res = m.constraint_map().apply(&((&xs + xs.transpose()) * 0.5)).unwrap();
            assert!(res.amax() < 1e-10 * (1.0 + g.norm()), "{m:?}");

            // gradient identity: egrad - 2 R B*(u) = 2 R S, tangent, equals projection
            let egrad = &r * &g * 2.0;
            let rg = m.riem_grad(&r, &egrad, &u).unwrap();
            assert!((&rg - &r * &s * 2.0).amax() < 1e-10 * (1.0 + s.norm()));
            assert!(m.tangent_residual(&r, &rg).unwrap().amax() < 1e-10);
            let proj = m.project_tangent(&r, &egrad).unwrap();
            assert!((&rg - &proj).amax() < 1e-10);
        }
    }

    #[test]
    fn riem_hess_zero_direction() {
        let m = ManifoldDescriptor::oblique(4);
        let r = m.random_point(2, 1).unwrap();
        let mut s = SymSum::new(4);
        s.push(SymTerm::Identity(1.0));
        let z = DMatrix::zeros(2, 4);
        let h = m.riem_hess_vec(&r, &z, &s, &z).unwrap();
        assert_eq!(h.amax(), 0.0);
    }
}
