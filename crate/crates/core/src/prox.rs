//! Nonsmooth terms `h` acting elementwise on symmetric matrices.
//!
//! For a splitting penalty `sigma` and multiplier `Z`, write `V = X - Z/sigma`.
//! Then `T(X) = V - prox_{h/sigma}(V)` and the Moreau envelope
//! `h(prox_{h/sigma}(V)) + sigma/2 ||T(X)||^2` has gradient `sigma T(X)`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Result, SdpError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxOracle {
    Zero,
    /// `lambda * sum_ij |X_ij|`.
    L1 { lambda: f64 },
    /// Indicator of `X >= 0` elementwise.
    IndicatorNonneg,
    /// Indicator of `X >= lower` elementwise.
    IndicatorBox { lower: f64 },
}

/// Value of `h^*` at a point, with the amount by which the point leaves the
/// conjugate's domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateValue {
    pub value: f64,
    pub violation: f64,
}

impl ConjugateValue {
    pub fn is_feasible(&self) -> bool {
        self.violation == 0.0
    }
}

fn check_positive(name: &str, t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(SdpError::InvalidParameter(format!("{name} must be positive, got {t}")));
    }
    Ok(())
}

fn check_same(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    check_dim("prox operand", a.nrows(), b.nrows())?;
    check_dim("prox operand", a.ncols(), b.ncols())
}

impl ProxOracle {
    pub fn l1(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(SdpError::InvalidParameter(format!("l1 weight must be >= 0, got {lambda}")));
        }
        Ok(ProxOracle::L1 { lambda })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ProxOracle::Zero)
    }

    /// `h(X)` for objective reporting. Indicators count as zero; their
    /// feasibility is measured separately through `||X - W||`.
    pub fn objective_value(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            ProxOracle::L1 { lambda } => lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            _ => 0.0,
        }
    }

    /// `prox_{t h}(W)`.
    pub fn prox(&self, t: f64, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_positive("prox step", t)?;
        Ok(match *self {
            ProxOracle::Zero => w.clone(),
            ProxOracle::L1 { lambda } => {
                let thr = t * lambda;
                w.map(|v| v.signum() * (v.abs() - thr).max(0.0))
            }
            ProxOracle::IndicatorNonneg => w.map(|v| v.max(0.0)),
            ProxOracle::IndicatorBox { lower } => w.map(|v| v.max(lower)),
        })
    }

    /// `T(X) = (X - Z/sigma) - prox_{h/sigma}(X - Z/sigma)`.
    pub fn t_map(&self, sigma: f64, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_positive("sigma", sigma)?;
        check_same(z, x)?;
        let v = x - z / sigma;
        Ok(match *self {
            ProxOracle::Zero => DMatrix::zeros(x.nrows(), x.ncols()),
            ProxOracle::L1 { lambda } => {
                let c = lambda / sigma;
                v.map(|e| e.clamp(-c, c))
            }
            ProxOracle::IndicatorNonneg => v.map(|e| e.min(0.0)),
            ProxOracle::IndicatorBox { lower } => v.map(|e| (e - lower).min(0.0)),
        })
    }

    /// Moreau-envelope value `h(prox_{h/sigma}(V)) + sigma/2 ||T(X)||_F^2`.
    pub fn envelope_value(&self, sigma: f64, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
        let t = self.t_map(sigma, z, x)?;
        let hp = match self {
            ProxOracle::L1 { .. } => {
                let p = x - z / sigma - &t;
                self.objective_value(&p)
            }
            _ => 0.0,
        };
        Ok(hp + 0.5 * sigma * t.norm_squared())
    }

    /// 0/1 mask of an element of the generalized Jacobian of `T` at `X`.
    /// Entries exactly at a kink keep mask value 1.
    pub fn jacobian_mask(&self, sigma: f64, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_positive("sigma", sigma)?;
        check_same(z, x)?;
        let v = x - z / sigma;
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        Ok(match *self {
            ProxOracle::Zero => DMatrix::zeros(x.nrows(), x.ncols()),
            ProxOracle::L1 { lambda } => {
                let c = lambda / sigma;
                v.map(|e| ind(e.abs() <= c))
            }
            ProxOracle::IndicatorNonneg => v.map(|e| ind(e <= 0.0)),
            ProxOracle::IndicatorBox { lower } => v.map(|e| ind(e <= lower)),
        })
    }

    /// `P[D]` for the Jacobian element selected by [`Self::jacobian_mask`].
    pub fn jacobian_element_action(
        &self,
        sigma: f64,
        z: &DMatrix<f64>,
        x: &DMatrix<f64>,
        d: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        check_same(x, d)?;
        Ok(self.jacobian_mask(sigma, z, x)?.component_mul(d))
    }

    /// `h^*(Y)`; outside the domain the value is reported as 0 together with
    /// the size of the violation.
    pub fn conjugate_value(&self, y: &DMatrix<f64>) -> ConjugateValue {
        let max_pos = y.iter().fold(0.0f64, |a, &v| a.max(v));
        match *self {
            ProxOracle::Zero => ConjugateValue { value: 0.0, violation: y.amax() },
            ProxOracle::L1 { lambda } => ConjugateValue {
                value: 0.0,
                violation: (y.amax() - lambda).max(0.0),
            },
            ProxOracle::IndicatorNonneg => ConjugateValue { value: 0.0, violation: max_pos },
            ProxOracle::IndicatorBox { lower } => ConjugateValue {
                value: lower * y.iter().map(|v| v.min(0.0)).sum::<f64>(),
                violation: max_pos,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        (&a + a.transpose()) * 0.5
    }

    fn oracles() -> Vec<ProxOracle> {
        vec![
            ProxOracle::Zero,
            ProxOracle::L1 { lambda: 0.7 },
            ProxOracle::IndicatorNonneg,
            ProxOracle::IndicatorBox { lower: -0.4 },
        ]
    }

    #[test]
    fn prox_examples() {
        let w = DMatrix::from_row_slice(1, 2, &[2.0, -0.3]);
        let p = ProxOracle::L1 { lambda: 1.0 }.prox(0.5, &w).unwrap();
        assert_eq!(p.as_slice(), &[1.5, 0.0]);
        let mi = -DMatrix::<f64>::identity(3, 3);
        assert_eq!(ProxOracle::IndicatorNonneg.prox(1.0, &mi).unwrap().amax(), 0.0);
        assert_eq!(ProxOracle::Zero.prox(3.0, &w).unwrap(), w);
        assert!(ProxOracle::Zero.prox(0.0, &w).is_err());
        assert!(ProxOracle::Zero.t_map(-1.0, &w, &w).is_err());
    }

    #[test]
    fn t_map_examples() {
        let z = DMatrix::zeros(1, 1);
        let x = DMatrix::from_element(1, 1, 0.25);
        // lambda / sigma = 0.1
        let t = ProxOracle::L1 { lambda: 0.1 }.t_map(1.0, &z, &x).unwrap();
        assert!((t[(0, 0)] - 0.1).abs() < 1e-15);
        assert_eq!(ProxOracle::Zero.t_map(2.0, &z, &x).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn moreau_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for h in oracles() {
            for _ in 0..20 {
                let x = rand_sym(5, &mut rng);
                let z = rand_sym(5, &mut rng);
                let sigma = rng.random_range(0.1..5.0);
                let t = h.t_map(sigma, &z, &x).unwrap();
                let v = &x - &z / sigma;
                let p = h.prox(1.0 / sigma, &v).unwrap();
                assert!((&t + &p - &v).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn envelope_examples_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = DMatrix::zeros(3, 3);
        let x = rand_sym(3, &mut rng);
        assert_eq!(ProxOracle::Zero.envelope_value(1.3, &z, &x).unwrap(), 0.0);
        let xpos = x.map(|v| v.abs() + 0.1);
        assert_eq!(ProxOracle::IndicatorNonneg.envelope_value(1.3, &z, &xpos).unwrap(), 0.0);

        for h in oracles() {
            let x = rand_sym(4, &mut rng);
            let z = rand_sym(4, &mut rng);
            let sigma = 1.7;
            let grad = h.t_map(sigma, &z, &x).unwrap() * sigma;
            let dir = rand_sym(4, &mut rng);
            let eps = 1e-6;
            let fp = h.envelope_value(sigma, &z, &(&x + &dir * eps)).unwrap();
            let fm = h.envelope_value(sigma, &z, &(&x - &dir * eps)).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            let an = grad.dot(&dir);
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{h:?}: {fd} vs {an}");
        }
    }

    #[test]
    fn jacobian_examples() {
        let z = DMatrix::zeros(2, 2);
        let x = DMatrix::from_element(2, 2, 5.0);
        let d = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(ProxOracle::Zero.jacobian_element_action(1.0, &z, &x, &d).unwrap().amax(), 0.0);
        assert_eq!(
            ProxOracle::L1 { lambda: 1.0 }
                .jacobian_element_action(1.0, &z, &x, &d)
                .unwrap()
                .amax(),
            0.0
        );
        // kink keeps the entry
        let at = DMatrix::from_element(1, 1, 1.0);
        let m = ProxOracle::L1 { lambda: 1.0 }
            .jacobian_mask(1.0, &DMatrix::zeros(1, 1), &at)
            .unwrap();
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn conjugate_examples() {
        let y = DMatrix::from_element(2, 2, 0.9);
        assert!(ProxOracle::L1 { lambda: 1.0 }.conjugate_value(&y).is_feasible());
        let mi = -DMatrix::<f64>::identity(2, 2);
        assert!(ProxOracle::IndicatorNonneg.conjugate_value(&mi).is_feasible());
        let y = DMatrix::from_element(1, 1, 1.3);
        let c = ProxOracle::L1 { lambda: 1.0 }.conjugate_value(&y);
        assert!((c.violation - 0.3).abs() < 1e-12);
        assert!(!ProxOracle::Zero.conjugate_value(&y).is_feasible());
    }

    proptest! {
        #[test]
        fn prox_nonexpansive(seed in 0u64..10_000, t in 0.01f64..10.0, which in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = oracles()[which];
            let a = rand_sym(4, &mut rng);
            let b = rand_sym(4, &mut rng);
            let pa = h.prox(t, &a).unwrap();
            let pb = h.prox(t, &b).unwrap();
            prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-14);
        }

        #[test]
        fn jacobian_mask_is_projection(seed in 0u64..10_000, sigma in 0.05f64..20.0, which in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = oracles()[which];
            let x = rand_sym(4, &mut rng);
            let z = rand_sym(4, &mut rng);
            let d = rand_sym(4, &mut rng);
            let e = rand_sym(4, &mut rng);
            let pd = h.jacobian_element_action(sigma, &z, &x, &d).unwrap();
            prop_assert!(pd.norm() <= d.norm() + 1e-15);
            let ppd = h.jacobian_element_action(sigma, &z, &x, &pd).unwrap();
            prop_assert!((&ppd - &pd).amax() == 0.0);
            let pe = h.jacobian_element_action(sigma, &z, &x, &e).unwrap();
            prop_assert!((pd.dot(&e) - pe.dot(&d)).abs() < 1e-12);
            prop_assert!(pd.dot(&d) >= 0.0);
            prop_assert!((&pd - pd.transpose()).amax() < 1e-15);
        }
    }
}
