//! Sparse PCA `min -<L, X> + lambda ||X||_1` over `tr X = 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::linmap::SymMatrix;
use crate::manifold::ManifoldDescriptor;
use crate::model::{SdpProblem, SmoothOracle};
use crate::prox::ProxOracle;

pub fn build_spca(l: &SymMatrix, lambda: f64, p: Option<usize>) -> Result<SdpProblem> {
    let n = l.n();
    let c = SymMatrix::Dense(-l.to_dense());
    SdpProblem::new(
        SmoothOracle::Linear(c),
        ProxOracle::l1(lambda)?,
        ManifoldDescriptor::sphere(n),
        p.unwrap_or(n.min(4)),
    )
}

/// `u u^T / ||u||^2 + 2 V V^T` with `u_i = 1/i` and `V` uniform on `[0, 1]`.
pub fn random_spca_matrix(n: usize, seed: u64) -> Result<SymMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = DVector::from_fn(n, |i, _| 1.0 / (i + 1) as f64);
    let v = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
    let l = &u * u.transpose() / u.norm_squared() + (&v * v.transpose()) * 2.0;
    SymMatrix::dense(l)
}
