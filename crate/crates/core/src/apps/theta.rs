//! Lovász theta: `min -<ee^T, X>` over `tr X = 1`, `X_ij = 0` on edges.

use nalgebra::DVector;

use super::Graph;
use crate::error::Result;
use crate::linmap::{SymLinearMap, SymMatrix};
use crate::manifold::ManifoldDescriptor;
use crate::model::{SdpProblem, SmoothOracle};
use crate::prox::ProxOracle;

pub fn build_theta(g: &Graph, p: Option<usize>) -> Result<SdpProblem> {
    let n = g.n();
    let pairs: Vec<(usize, usize)> = g.edges().iter().map(|&(i, j, _)| (i, j)).collect();
    let m = pairs.len();
    let p = p.unwrap_or_else(|| n.min((2.0 * (m + 1) as f64).sqrt().ceil() as usize + 1));
    // -||Re||^2, kept as a rank-one operator
    let c = SymMatrix::RankOne { scale: -1.0, v: DVector::from_element(n, 1.0) };
    SdpProblem::new(SmoothOracle::Linear(c), ProxOracle::Zero, ManifoldDescriptor::sphere(n), p)?
        .with_equalities(SymLinearMap::entries(n, pairs)?, DVector::zeros(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn structure() {
        let prob = build_theta(&Graph::cycle(5), None).unwrap();
        assert_eq!(prob.m(), 5);
        assert_eq!(prob.p(), 5);
        assert!(!prob.needs_explicit_x());
        // X = ee^T/5 gives -5 but violates the edge constraints
        let r = DMatrix::from_element(1, 5, 1.0 / 5f64.sqrt());
        assert!((prob.f().value(&r, None).unwrap() + 5.0).abs() < 1e-12);
        assert!((prob.eq_value(&r, None).unwrap()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn default_rank_capped_by_n() {
        assert_eq!(build_theta(&Graph::complete(4), None).unwrap().p(), 4);
        assert_eq!(build_theta(&Graph::empty(30), None).unwrap().p(), 3);
    }
}
