//! Problem builders for max-cut, Lovász theta, clustering, nearest
//! correlation and sparse PCA, plus cut rounding.

mod gset;
pub mod maxcut;
pub mod ncm;
pub mod rcp;
pub mod spca;
pub mod theta;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SdpError};
use crate::linmap::SymMatrix;

pub use gset::best_known_cut;

/// Weighted undirected graph. Vertices are 0-based here; the text formats
/// use 1-based ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    /// Edges are stored with `i < j`. Self-loops and repeated pairs are errors.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut out: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(SdpError::InvalidParameter(format!("edge ({i}, {j}) out of range for {n} vertices")));
            }
            if i == j {
                return Err(SdpError::InvalidParameter(format!("self-loop at vertex {i}")));
            }
            if !w.is_finite() {
                return Err(SdpError::NonFinite(format!("weight of edge ({i}, {j})")));
            }
            out.push((i.min(j), i.max(j), w));
        }
        let mut keys: Vec<(usize, usize)> = out.iter().map(|e| (e.0, e.1)).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(SdpError::InvalidParameter(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        Ok(Self { n, edges: out })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new() }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))).collect();
        Self { n, edges }
    }

    pub fn cycle(n: usize) -> Self {
        let edges = if n < 3 { Vec::new() } else { (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n), 1.0)).collect() };
        Self { n, edges }
    }

    /// Erdős–Rényi graph with unit weights.
    pub fn random(n: usize, p_edge: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p_edge {
                    edges.push((i, j, 1.0));
                }
            }
        }
        Self { n, edges }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn laplacian(&self) -> Result<SymMatrix> {
        let mut deg = vec![0.0; self.n];
        let mut trip = Vec::with_capacity(self.edges.len() + self.n);
        for &(i, j, w) in &self.edges {
            deg[i] += w;
            deg[j] += w;
            trip.push((i, j, -w));
        }
        trip.extend(deg.into_iter().enumerate().map(|(i, d)| (i, i, d)));
        SymMatrix::sparse(self.n, trip)
    }

    /// Total weight of edges whose endpoints get different signs.
    pub fn cut_value(&self, signs: &[f64]) -> f64 {
        self.edges
            .iter()
            .filter(|&&(i, j, _)| (signs[i] >= 0.0) != (signs[j] >= 0.0))
            .map(|e| e.2)
            .sum()
    }
}

/// `100 (best - cut) / best`.
pub fn gap_percent(best: f64, cut: f64) -> Result<f64> {
    if !(best > 0.0) {
        return Err(SdpError::InvalidParameter(format!("best-known value must be positive, got {best}")));
    }
    Ok(100.0 * (best - cut) / best)
}
