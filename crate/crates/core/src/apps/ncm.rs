//! Nearest correlation matrix `min 1/2 ||H o (X - G)||^2` over `diag X = e`,
//! optionally with `X >= l` elementwise.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SdpError};
use crate::manifold::ManifoldDescriptor;
use crate::model::{SdpProblem, SmoothOracle};
use crate::prox::ProxOracle;

pub fn build_ncm(
    g: &DMatrix<f64>,
    weights: Option<&DMatrix<f64>>,
    lower: Option<f64>,
    p: Option<usize>,
) -> Result<SdpProblem> {
    let n = g.nrows();
    let h = match weights {
        Some(w) => w.clone(),
        None => DMatrix::from_element(n, g.ncols(), 1.0),
    };
    let prox = match lower {
        Some(l) if l > 1.0 => {
            return Err(SdpError::InvalidParameter(format!("lower bound {l} exceeds the unit diagonal")))
        }
        Some(l) if !l.is_finite() => return Err(SdpError::NonFinite("box lower bound".into())),
        Some(l) => ProxOracle::IndicatorBox { lower: l },
        None => ProxOracle::Zero,
    };
    let f = SmoothOracle::weighted_quad(h, g.clone())?;
    SdpProblem::new(f, prox, ManifoldDescriptor::oblique(n), p.unwrap_or(n))
}

/// Perturbed correlation matrix: a random correlation matrix plus symmetric
/// uniform noise of size `noise`, with unit diagonal.
pub fn random_ncm_target(n: usize, noise: f64, seed: u64) -> Result<DMatrix<f64>> {
    let man = ManifoldDescriptor::oblique(n);
    let r = man.random_point(n.clamp(1, 3), seed)?;
    let mut g = r.transpose() * r;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for i in 0..n {
        for j in i + 1..n {
            let e = noise * rng.random_range(-1.0..1.0);
            g[(i, j)] += e;
            g[(j, i)] += e;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_target_is_zero_cost() {
        let man = ManifoldDescriptor::oblique(5);
        let r = man.random_point(2, 1).unwrap();
        let g = r.transpose() * &r;
        let prob = build_ncm(&g, None, None, None).unwrap();
        assert_eq!(prob.p(), 5);
        assert!(prob.f().value(&r, Some(&g)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rejects_lower_above_one() {
        let g = DMatrix::identity(2, 2);
        assert!(build_ncm(&g, None, Some(1.5), None).is_err());
        assert!(build_ncm(&g, None, Some(-0.4), None).is_ok());
    }

    #[test]
    fn random_target_symmetric() {
        let g = random_ncm_target(6, 0.3, 4).unwrap();
        assert_eq!(g, g.transpose());
        assert!(g.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-12));
    }
}
