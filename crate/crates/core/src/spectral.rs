//! Extremal eigenvalue estimates for the dual slack `S`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SdpError};

/// Smallest eigenpair and the Frobenius norm of the negative part of a
/// symmetric operator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub lambda_min: f64,
    pub min_vector: DVector<f64>,
    /// `||P_{psd}(-S)||_F`.
    pub neg_norm: f64,
    /// True when computed by Lanczos rather than a full decomposition.
    pub estimated: bool,
}

pub fn dense_spectrum(m: &DMatrix<f64>) -> Result<Spectrum> {
    if m.is_empty() {
        return Err(SdpError::Eigen("empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SdpError::Eigen("non-finite entry".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let (imin, &lambda_min) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let neg_norm = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| l * l).sum::<f64>().sqrt();
    Ok(Spectrum {
        lambda_min,
        min_vector: eig.eigenvectors.column(imin).clone_owned(),
        neg_norm,
        estimated: false,
    })
}

/// Lanczos with full reorthogonalization. Returns Ritz values (ascending) and
/// the matching Ritz vectors.
pub fn lanczos<F>(matvec: &mut F, start: &DVector<f64>, steps: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = start.len();
    let steps = steps.min(n).max(1);
    let nrm = start.norm();
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(SdpError::Eigen("bad Lanczos start vector".into()));
    }
    let mut basis: Vec<DVector<f64>> = vec![start / nrm];
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut w = matvec(&basis[k])?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::Eigen("non-finite operator output".into()));
        }
        let a = basis[k].dot(&w);
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let b = w.norm();
        let scale = alpha.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        if k + 1 == steps || b <= 1e-12 * scale {
            break;
        }
        beta.push(b);
        basis.push(w / b);
    }
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let s = eig.eigenvectors.column(i);
            let mut v = DVector::zeros(n);
            for (j, q) in basis.iter().enumerate() {
                v.axpy(s[j], q, 1.0);
            }
            v
        })
        .collect();
    Ok((values, vectors))
}

/// Smallest eigenpair by restarted Lanczos, plus a negative-part estimate from
/// the negative Ritz values of the last cycle.
pub fn lanczos_spectrum<F>(mut matvec: F, n: usize, steps: usize, seed: u64) -> Result<Spectrum>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if n == 0 {
        return Err(SdpError::Eigen("empty operator".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut best: Option<(Vec<f64>, DVector<f64>)> = None;
    for _cycle in 0..4 {
        let (vals, vecs) = lanczos(&mut matvec, &start, steps)?;
        let v = vecs[0].clone();
        let av = matvec(&v)?;
        let res = (&av - &v * vals[0]).norm();
        let done = res <= 1e-10 * (1.0 + vals[0].abs()) || vals.len() >= n;
        best = Some((vals, v.clone()));
        if done {
            break;
        }
        // restart from the current minimizer mixed with a fresh direction
        let fresh = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        start = &v + fresh * (1e-3 / (n as f64).sqrt());
    }
    let (vals, v) = best.expect("at least one cycle");
    let neg_norm = vals.iter().filter(|&&l| l < 0.0).map(|l| l * l).sum::<f64>().sqrt();
    Ok(Spectrum {
        lambda_min: vals[0],
        min_vector: v,
        neg_norm,
        estimated: vals.len() < n,
    })
}
