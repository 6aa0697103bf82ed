//! Max-cut relaxation `min -1/4 <L, X>` over `diag X = e`, with optional
//! triangle cuts and an entropy penalty, plus hyperplane rounding.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::alm::{solve, SolveOptions};
use crate::error::{Result, SdpError};
use crate::linmap::{Factor, SymLinearMap, SymMatrix};
use crate::manifold::ManifoldDescriptor;
use crate::model::{EntropyKind, SdpProblem, SmoothOracle};
use crate::prox::ProxOracle;

/// Sign choice of a triangle inequality
/// `s1 X_ij + s2 X_ik + s3 X_jk >= -1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CutPattern {
    #[serde(rename = "+++")]
    PPP,
    #[serde(rename = "+--")]
    PMM,
    #[serde(rename = "-+-")]
    MPM,
    #[serde(rename = "--+")]
    MMP,
}

impl CutPattern {
    pub const ALL: [CutPattern; 4] = [CutPattern::PPP, CutPattern::PMM, CutPattern::MPM, CutPattern::MMP];

    pub fn signs(self) -> [f64; 3] {
        match self {
            CutPattern::PPP => [1.0, 1.0, 1.0],
            CutPattern::PMM => [1.0, -1.0, -1.0],
            CutPattern::MPM => [-1.0, 1.0, -1.0],
            CutPattern::MMP => [-1.0, -1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangleCut {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub pattern: CutPattern,
}

impl TriangleCut {
    /// `s1 X_ij + s2 X_ik + s3 X_jk`.
    pub fn signed_sum(&self, x: &DMatrix<f64>) -> f64 {
        let s = self.pattern.signs();
        s[0] * x[(self.i, self.j)] + s[1] * x[(self.i, self.k)] + s[2] * x[(self.j, self.k)]
    }

    /// How far the inequality is violated at `x` (zero when satisfied).
    pub fn violation(&self, x: &DMatrix<f64>) -> f64 {
        (-1.0 - self.signed_sum(x)).max(0.0)
    }

    fn key(&self) -> (usize, usize, usize, CutPattern) {
        (self.i, self.j, self.k, self.pattern)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutPlaneSet {
    cuts: Vec<TriangleCut>,
}

impl CutPlaneSet {
    pub fn new(cuts: Vec<TriangleCut>) -> Result<Self> {
        for c in &cuts {
            if !(c.i < c.j && c.j < c.k) {
                return Err(SdpError::InvalidParameter(format!(
                    "triangle ({}, {}, {}) must be strictly increasing",
                    c.i, c.j, c.k
                )));
            }
        }
        let mut keys: Vec<_> = cuts.iter().map(TriangleCut::key).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(SdpError::InvalidParameter("duplicate triangle cut".into()));
        }
        Ok(Self { cuts })
    }

    pub fn cuts(&self) -> &[TriangleCut] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// Rows `-(signed sum) <= 1` as sparse coefficient matrices.
    fn inequality_map(&self, n: usize) -> Result<(SymLinearMap, DVector<f64>)> {
        let mut mats = Vec::with_capacity(self.cuts.len());
        for c in &self.cuts {
            if c.k >= n {
                return Err(SdpError::InvalidParameter(format!("cut vertex {} out of range", c.k)));
            }
            let s = c.pattern.signs();
            mats.push(SymMatrix::sparse(
                n,
                [(c.i, c.j, -0.5 * s[0]), (c.i, c.k, -0.5 * s[1]), (c.j, c.k, -0.5 * s[2])],
            )?);
        }
        Ok((SymLinearMap::general(n, mats)?, DVector::from_element(self.cuts.len(), 1.0)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EntropyTerm {
    pub kind: EntropyKind,
    pub lambda: f64,
}

/// `C = -L/4` for the graph Laplacian `L`.
pub fn maxcut_cost(g: &Graph) -> Result<SymMatrix> {
    let mut deg = vec![0.0; g.n()];
    let mut trip = Vec::with_capacity(g.num_edges() + g.n());
    for &(i, j, w) in g.edges() {
        deg[i] += w;
        deg[j] += w;
        trip.push((i, j, 0.25 * w));
    }
    trip.extend(deg.into_iter().enumerate().map(|(i, d)| (i, i, -0.25 * d)));
    SymMatrix::sparse(g.n(), trip)
}

pub fn default_rank(n: usize, constraints: usize) -> usize {
    n.min((2.0 * constraints as f64).sqrt().ceil() as usize + 1)
}

pub fn build_maxcut(
    g: &Graph,
    cuts: Option<&CutPlaneSet>,
    entropy: Option<EntropyTerm>,
    p: Option<usize>,
) -> Result<SdpProblem> {
    let n = g.n();
    if g.num_edges() == 0 {
        return Err(SdpError::InvalidParameter("max-cut needs at least one edge".into()));
    }
    let c = maxcut_cost(g)?;
    let f = match entropy {
        Some(e) => SmoothOracle::with_entropy(c, e.kind, e.lambda)?,
        None => SmoothOracle::Linear(c),
    };
    let ncuts = cuts.map_or(0, CutPlaneSet::len);
    let p = p.unwrap_or_else(|| default_rank(n, n + ncuts));
    let mut prob = SdpProblem::new(f, ProxOracle::Zero, ManifoldDescriptor::oblique(n), p)?;
    if let Some(cs) = cuts.filter(|c| !c.is_empty()) {
        let (map, rhs) = cs.inequality_map(n)?;
        prob = prob.with_inequalities(map, rhs)?;
    }
    Ok(prob)
}

#[derive(Clone, Copy)]
struct Ranked {
    violation: f64,
    cut: TriangleCut,
}

/// Larger violation first, then lexicographic `(i, j, k, pattern)`.
fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.violation.total_cmp(&a.violation).then_with(|| a.cut.key().cmp(&b.cut.key()))
}

/// The `m` most violated triangle inequalities at `x`, by exhaustive scan.
pub fn most_violated_cuts(x: &DMatrix<f64>, m: usize) -> Result<CutPlaneSet> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(SdpError::DimensionMismatch { context: "cut search", expected: n, got: x.ncols() });
    }
    if m == 0 {
        return Ok(CutPlaneSet::default());
    }
    let mut pool: Vec<Ranked> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for pattern in CutPattern::ALL {
                    let cut = TriangleCut { i, j, k, pattern };
                    let violation = cut.violation(x);
                    if violation > 0.0 {
                        pool.push(Ranked { violation, cut });
                    }
                }
            }
            if pool.len() > 8 * m + 1024 {
                pool.select_nth_unstable_by(m - 1, rank_order);
                pool.truncate(m);
            }
        }
    }
    pool.sort_by(rank_order);
    pool.truncate(m);
    CutPlaneSet::new(pool.into_iter().map(|r| r.cut).collect())
}

/// Two-step cut selection: solve the entropy-penalized relaxation without
/// cuts, then keep the `m` most violated triangles at that solution.
/// Defaults are `lambda_ent = 0.1 max|C_ij|` and `m = ceil(sqrt(n/2))`.
pub fn generate_cutting_planes(
    g: &Graph,
    kind: EntropyKind,
    lambda_ent: Option<f64>,
    m: Option<usize>,
    opts: &SolveOptions,
) -> Result<CutPlaneSet> {
    let lambda = match lambda_ent {
        Some(l) => l,
        None => 0.1 * maxcut_cost(g)?.max_abs(),
    };
    let m = m.unwrap_or_else(|| ((g.n() as f64 / 2.0).sqrt()).ceil() as usize);
    let prob = build_maxcut(g, None, Some(EntropyTerm { kind, lambda }), None)?;
    let sol = solve(&prob, opts)?;
    most_violated_cuts(&prob.explicit_x(&sol.r), m)
}

fn thread_count() -> usize {
    std::env::var("LRSDP_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&t| t > 0).unwrap_or(1)
}

fn round_trial(g: &Graph, r: &Factor, seed: u64) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = DVector::from_fn(r.nrows(), |_, _| StandardNormal.sample(&mut rng));
    let proj = r.tr_mul(&dir);
    let signs: Vec<f64> = proj
        .iter()
        .map(|&v| match v.partial_cmp(&0.0) {
            Some(Ordering::Greater) => 1.0,
            Some(Ordering::Less) => -1.0,
            _ => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect();
    (g.cut_value(&signs), signs)
}

/// Best of `trials` random-hyperplane roundings of the factor `r` (p x n).
/// Trial `t` uses seed `seed + t`, so the result does not depend on how
/// trials are spread over threads (`LRSDP_THREADS`, default 1).
pub fn round_cut(g: &Graph, r: &Factor, trials: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    if r.ncols() != g.n() {
        return Err(SdpError::DimensionMismatch { context: "rounding factor", expected: g.n(), got: r.ncols() });
    }
    let trials = trials.max(1);
    let threads = thread_count().min(trials);
    let better = |a: &(usize, f64, Vec<f64>), b: &(usize, f64, Vec<f64>)| b.1 > a.1 || (b.1 == a.1 && b.0 < a.0);
    let run = |range: std::ops::Range<usize>| {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for t in range {
            let (cut, signs) = round_trial(g, r, seed.wrapping_add(t as u64));
            let cand = (t, cut, signs);
            if best.as_ref().is_none_or(|b| better(b, &cand)) {
                best = Some(cand);
            }
        }
        best
    };
    let results: Vec<_> = if threads <= 1 {
        vec![run(0..trials)]
    } else {
        let chunk = trials.div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(trials);
                    s.spawn(move || run(lo..hi))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rounding worker panicked")).collect()
        })
    };
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for cand in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| better(b, &cand)) {
            best = Some(cand);
        }
    }
    let (_, cut, signs) = best.expect("at least one trial");
    Ok((cut, signs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AlmContext;
    use proptest::prelude::*;

    fn sign_factor(signs: &[f64]) -> Factor {
        DMatrix::from_row_slice(1, signs.len(), signs)
    }

    #[test]
    fn k3_cost_matrix() {
        let c = maxcut_cost(&Graph::complete(3)).unwrap().to_dense();
        assert_eq!(c[(0, 0)], -0.5);
        assert_eq!(c[(0, 1)], 0.25);
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(build_maxcut(&Graph::empty(3), None, None, None).is_err());
    }

    #[test]
    fn default_rank_rule() {
        let p = build_maxcut(&Graph::cycle(50), None, None, None).unwrap().p();
        assert_eq!(p, 11);
        assert_eq!(build_maxcut(&Graph::complete(3), None, None, None).unwrap().p(), 3);
    }

    // [DERIVED] objective at a +-1 rank-one factor is minus the cut it induces
    proptest! {
        #[test]
        fn objective_is_negative_cut(bits in proptest::collection::vec(any::<bool>(), 8), seed in 0u64..50) {
            let g = Graph::random(8, 0.5, seed);
            prop_assume!(g.num_edges() > 0);
            let signs: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
            let prob = build_maxcut(&g, None, None, Some(1)).unwrap();
            let r = sign_factor(&signs);
            let v = prob.f().value(&r, None).unwrap();
            prop_assert!((v + g.cut_value(&signs)).abs() < 1e-12);
        }
    }

    #[test]
    fn cut_rows_match_inequality() {
        let g = Graph::complete(4);
        let cuts = CutPlaneSet::new(vec![
            TriangleCut { i: 0, j: 1, k: 2, pattern: CutPattern::PPP },
            TriangleCut { i: 1, j: 2, k: 3, pattern: CutPattern::MPM },
        ])
        .unwrap();
        let prob = build_maxcut(&g, Some(&cuts), None, None).unwrap();
        let r = ManifoldDescriptor::oblique(4).random_point(3, 4).unwrap();
        let x = prob.explicit_x(&r);
        let lhs = prob.ineq_value(&r, None).unwrap();
        for (row, c) in cuts.cuts().iter().enumerate() {
            assert!((lhs[row] + c.signed_sum(&x)).abs() < 1e-14);
        }
        AlmContext::new(&prob, 1.0).unwrap();
    }

    #[test]
    fn cut_set_validation() {
        let bad = TriangleCut { i: 2, j: 1, k: 3, pattern: CutPattern::PPP };
        assert!(CutPlaneSet::new(vec![bad]).is_err());
        let c = TriangleCut { i: 0, j: 1, k: 3, pattern: CutPattern::PMM };
        assert!(CutPlaneSet::new(vec![c, c]).is_err());
    }

    #[test]
    fn identity_has_no_violations() {
        assert!(most_violated_cuts(&DMatrix::identity(6, 6), 5).unwrap().is_empty());
    }

    #[test]
    fn constructed_violation_selected_first() {
        let mut x = DMatrix::identity(4, 4);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            x[(i, j)] = -0.6;
            x[(j, i)] = -0.6;
        }
        let set = most_violated_cuts(&x, 2).unwrap();
        let first = set.cuts()[0];
        assert_eq!(first, TriangleCut { i: 0, j: 1, k: 2, pattern: CutPattern::PPP });
        assert!((first.violation(&x) - 0.8).abs() < 1e-12);
    }

    // [DERIVED] brute-force top-m over every triangle and pattern
    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn top_m_matches_enumeration(seed in 0u64..1000, n in 4usize..20, m in 1usize..6) {
            let r = ManifoldDescriptor::oblique(n).random_point(3, seed).unwrap();
            let x = r.transpose() * &r;
            let got = most_violated_cuts(&x, m).unwrap();
            let mut all = Vec::new();
            for i in 0..n { for j in i + 1..n { for k in j + 1..n { for pattern in CutPattern::ALL {
                let cut = TriangleCut { i, j, k, pattern };
                if cut.violation(&x) > 0.0 { all.push(Ranked { violation: cut.violation(&x), cut }); }
            }}}}
            all.sort_by(rank_order);
            all.truncate(m);
            let want: Vec<_> = all.into_iter().map(|r| r.cut).collect();
            prop_assert_eq!(got.cuts(), &want[..]);
        }
    }

    #[test]
    fn rounding_exact_for_sign_factor() {
        let g = Graph::new(2, [(0, 1, 3.5)]).unwrap();
        let (cut, signs) = round_cut(&g, &sign_factor(&[1.0, -1.0]), 5, 0).unwrap();
        assert_eq!(cut, 3.5);
        assert_ne!(signs[0], signs[1]);
    }

    #[test]
    fn rounding_zero_factor_still_valid() {
        let g = Graph::complete(4);
        let (cut, signs) = round_cut(&g, &DMatrix::zeros(2, 4), 10, 1).unwrap();
        assert_eq!(signs.len(), 4);
        assert!(signs.iter().all(|s| s.abs() == 1.0));
        assert_eq!(cut, g.cut_value(&signs));
    }

    #[test]
    fn rounding_deterministic() {
        let g = Graph::random(30, 0.3, 9);
        let r = ManifoldDescriptor::oblique(30).random_point(4, 2).unwrap();
        let a = round_cut(&g, &r, 40, 17).unwrap();
        let b = round_cut(&g, &r, 40, 17).unwrap();
        assert_eq!(a, b);
    }
}
