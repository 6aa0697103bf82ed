//! Clustering relaxation `min -<W, X>` over `Xe = e`, `tr X = K`, `X >= 0`.
//!
//! The trace constraint is the sphere `||R||_F^2 = K`; row sums are
//! equalities and nonnegativity is the nonsmooth term.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SdpError};
use crate::linmap::{SymLinearMap, SymMatrix};
use crate::manifold::ManifoldDescriptor;
use crate::model::{SdpProblem, SmoothOracle};
use crate::prox::ProxOracle;

pub fn build_rcp(w: &SymMatrix, k: usize, p: Option<usize>) -> Result<SdpProblem> {
    let n = w.n();
    if k == 0 || k > n {
        return Err(SdpError::InvalidParameter(format!("cluster count {k} must lie in 1..={n}")));
    }
    let c = match w {
        SymMatrix::Dense(m) => SymMatrix::Dense(-m),
        SymMatrix::Sparse(s) => SymMatrix::sparse(n, s.entries().iter().map(|&(i, j, v)| (i, j, -v)))?,
        SymMatrix::RankOne { scale, v } => SymMatrix::RankOne { scale: -scale, v: v.clone() },
    };
    // row i of X e = e: tr(A_i X) = sum_j X_ij with A_i = (e_i e^T + e e_i^T)/2
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let trip = (0..n).map(|j| if j == i { (i, i, 1.0) } else { (i, j, 0.5) });
        rows.push(SymMatrix::sparse(n, trip)?);
    }
    let p = p.unwrap_or_else(|| n.min((2.0 * (n + 1) as f64).sqrt().ceil() as usize + k));
    SdpProblem::new(
        SmoothOracle::Linear(c),
        ProxOracle::IndicatorNonneg,
        ManifoldDescriptor::scaled_sphere(n, k as f64)?,
        p,
    )?
    .with_equalities(SymLinearMap::general(n, rows)?, DVector::from_element(n, 1.0))
}

/// Gaussian affinity `exp(-||a_i - a_j||^2 / (2 s^2))` between points drawn
/// around `k` well-separated centers, zero on the diagonal. Stands in for
/// feature data when none is supplied.
pub fn synthetic_affinity(n: usize, k: usize, dim: usize, seed: u64) -> Result<SymMatrix> {
    if k == 0 || k > n || dim == 0 {
        return Err(SdpError::InvalidParameter("need 1 <= k <= n and dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = DMatrix::from_fn(dim, k, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        4.0 * z
    });
    let pts = DMatrix::from_fn(dim, n, |d, i| {
        let z: f64 = StandardNormal.sample(&mut rng);
        centers[(d, i % k)] + 0.5 * z
    });
    let s2 = 2.0 * dim as f64 * 0.25;
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-(pts.column(i) - pts.column(j)).norm_squared() / (2.0 * s2)).exp()
        }
    });
    SymMatrix::dense(w)
}
