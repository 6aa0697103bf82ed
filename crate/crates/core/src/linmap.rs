//! Symmetric matrices, linear maps `S^n -> R^m` and their factored application paths.
//!
//! Every map here can be applied either to an explicit symmetric `X` or to a
//! factor `R` with `X = R^T R`; the factored route never builds the `n x n`
//! matrix. Coefficient matrices of off-diagonal entry constraints follow the
//! convention `A = (E_ij + E_ji) / 2`, so that `tr(A X) = X_ij`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, SdpError};

/// A `p x n` factor of `X = R^T R`; column `i` belongs to vertex/row `i` of `X`.
pub type Factor = DMatrix<f64>;

/// Coordinate-list symmetric matrix holding the lower triangle (`i >= j`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    /// Builds a sparse symmetric matrix from `(i, j, v)` triplets (0-based).
    ///
    /// Upper-triangle entries are folded onto the lower triangle and repeated
    /// positions are summed.
    pub fn new(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(SdpError::InvalidParameter(format!(
                    "entry ({i}, {j}) out of range for dimension {n}"
                )));
            }
            if !v.is_finite() {
                return Err(SdpError::NonFinite(format!("entry ({i}, {j})")));
            }
            let (a, b) = if i >= j { (i, j) } else { (j, i) };
            entries.push((a, b, v));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        Ok(Self { n, entries: merged })
    }

    pub fn diagonal(values: &DVector<f64>) -> Self {
        let n = values.len();
        Self {
            n,
            entries: (0..n).map(|i| (i, i, values[i])).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Lower-triangle entries `(i, j, v)` with `i >= j`, sorted.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Symmetric `n x n` matrix in one of a few storage forms.
#[derive(Debug, Clone, PartialEq)]
pub enum SymMatrix {
    /// Full storage; the caller guarantees symmetry.
    Dense(DMatrix<f64>),
    Sparse(SparseSym),
    /// `scale * v v^T`, never materialized.
    RankOne { scale: f64, v: DVector<f64> },
}

impl SymMatrix {
    /// Symmetrizes `m` and wraps it as dense storage.
    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SdpError::DimensionMismatch {
                context: "dense symmetric matrix",
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NonFinite("dense matrix entry".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix::Dense(sym))
    }

    pub fn sparse(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        Ok(SymMatrix::Sparse(SparseSym::new(n, triplets)?))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix::Sparse(SparseSym::diagonal(&DVector::from_element(n, 1.0)))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix::Sparse(SparseSym { n, entries: vec![] })
    }

    pub fn n(&self) -> usize {
        match self {
            SymMatrix::Dense(m) => m.nrows(),
            SymMatrix::Sparse(s) => s.n,
            SymMatrix::RankOne { v, .. } => v.len(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        self.add_to_dense(&mut out, 1.0);
        out
    }

    /// `out += coef * M`.
    pub fn add_to_dense(&self, out: &mut DMatrix<f64>, coef: f64) {
        match self {
            SymMatrix::Dense(m) => *out += m * coef,
            SymMatrix::Sparse(s) => {
                for &(i, j, v) in &s.entries {
                    out[(i, j)] += coef * v;
                    if i != j {
                        out[(j, i)] += coef * v;
                    }
                }
            }
            SymMatrix::RankOne { scale, v } => {
                out.ger(coef * scale, v, v, 1.0);
            }
        }
    }

    /// Frobenius inner product `<M, X>` with a dense symmetric `X`.
    pub fn inner_dense(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            SymMatrix::Dense(m) => m.dot(x),
            SymMatrix::Sparse(s) => s
                .entries
                .iter()
                .map(|&(i, j, v)| if i == j { v * x[(i, i)] } else { v * (x[(i, j)] + x[(j, i)]) })
                .sum(),
            SymMatrix::RankOne { scale, v } => scale * v.dot(&(x * v)),
        }
    }

    /// `<M, R^T R>` without forming `R^T R`.
    pub fn inner_factored(&self, r: &Factor) -> f64 {
        match self {
            SymMatrix::Dense(m) => (r * m).dot(r),
            SymMatrix::Sparse(s) => s
                .entries
                .iter()
                .map(|&(i, j, v)| {
                    let d = r.column(i).dot(&r.column(j));
                    if i == j {
                        v * d
                    } else {
                        2.0 * v * d
                    }
                })
                .sum(),
            SymMatrix::RankOne { scale, v } => scale * (r * v).norm_squared(),
        }
    }

    /// `<M, U^T R + R^T U>`.
    pub fn sym_product_inner(&self, u: &Factor, r: &Factor) -> f64 {
        match self {
            SymMatrix::Dense(m) => 2.0 * (r * m).dot(u),
            SymMatrix::Sparse(s) => s
                .entries
                .iter()
                .map(|&(i, j, v)| {
                    if i == j {
                        2.0 * v * u.column(i).dot(&r.column(i))
                    } else {
                        2.0 * v * (u.column(i).dot(&r.column(j)) + r.column(i).dot(&u.column(j)))
                    }
                })
                .sum(),
            SymMatrix::RankOne { scale, v } => 2.0 * scale * (u * v).dot(&(r * v)),
        }
    }

    /// `out += coef * R M`.
    pub fn add_right_mul(&self, r: &Factor, coef: f64, out: &mut Factor) {
        match self {
            SymMatrix::Dense(m) => out.gemm(coef, r, m, 1.0),
            SymMatrix::Sparse(s) => {
                for &(i, j, v) in &s.entries {
                    out.column_mut(j).axpy(coef * v, &r.column(i), 1.0);
                    if i != j {
                        out.column_mut(i).axpy(coef * v, &r.column(j), 1.0);
                    }
                }
            }
            SymMatrix::RankOne { scale, v } => {
                let rv = r * v;
                out.ger(coef * scale, &rv, v, 1.0);
            }
        }
    }

    pub fn right_mul(&self, r: &Factor) -> Factor {
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        self.add_right_mul(r, 1.0, &mut out);
        out
    }

    /// `out += coef * M x`.
    pub fn add_matvec(&self, x: &DVector<f64>, coef: f64, out: &mut DVector<f64>) {
        match self {
            SymMatrix::Dense(m) => out.gemv(coef, m, x, 1.0),
            SymMatrix::Sparse(s) => {
                for &(i, j, v) in &s.entries {
                    out[i] += coef * v * x[j];
                    if i != j {
                        out[j] += coef * v * x[i];
                    }
                }
            }
            SymMatrix::RankOne { scale, v } => out.axpy(coef * scale * v.dot(x), v, 1.0),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            SymMatrix::Dense(m) => m.norm(),
            SymMatrix::Sparse(s) => s
                .entries
                .iter()
                .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
                .sum::<f64>()
                .sqrt(),
            SymMatrix::RankOne { scale, v } => scale.abs() * v.norm_squared(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        match self {
            SymMatrix::Dense(m) => m.amax(),
            SymMatrix::Sparse(s) => s.entries.iter().fold(0.0, |a, e| a.max(e.2.abs())),
            SymMatrix::RankOne { scale, v } => scale.abs() * v.amax() * v.amax(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, SymMatrix::Dense(_))
    }
}

/// Linear map `A: S^n -> R^m`, `A(X)_i = tr(A_i X)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SymLinearMap {
    /// Explicit coefficient matrices.
    General { n: usize, mats: Vec<SymMatrix> },
    /// `diag(X)`.
    Diag { n: usize },
    /// `tr(X)`.
    Trace { n: usize },
    /// Selected entries `X_ij`.
    Entries { n: usize, pairs: Vec<(usize, usize)> },
    /// Upper-triangle entries of every diagonal block, block-major and
    /// row-major inside a block. `bounds = [0, i_1, ..., n]`.
    BlockIdentity { n: usize, bounds: Vec<usize> },
}

impl SymLinearMap {
    pub fn general(n: usize, mats: Vec<SymMatrix>) -> Result<Self> {
        for m in &mats {
            check_dim("general map coefficient", n, m.n())?;
        }
        Ok(SymLinearMap::General { n, mats })
    }

    pub fn entries(n: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &pairs {
            if i >= n || j >= n {
                return Err(SdpError::InvalidParameter(format!(
                    "entry ({i}, {j}) out of range for dimension {n}"
                )));
            }
        }
        Ok(SymLinearMap::Entries { n, pairs })
    }

    pub fn block_identity(n: usize, bounds: Vec<usize>) -> Result<Self> {
        validate_bounds(n, &bounds)?;
        Ok(SymLinearMap::BlockIdentity { n, bounds })
    }

    pub fn n(&self) -> usize {
        match self {
            SymLinearMap::General { n, .. }
            | SymLinearMap::Diag { n }
            | SymLinearMap::Trace { n }
            | SymLinearMap::Entries { n, .. }
            | SymLinearMap::BlockIdentity { n, .. } => *n,
        }
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        match self {
            SymLinearMap::General { mats, .. } => mats.len(),
            SymLinearMap::Diag { n } => *n,
            SymLinearMap::Trace { .. } => 1,
            SymLinearMap::Entries { pairs, .. } => pairs.len(),
            SymLinearMap::BlockIdentity { bounds, .. } => bounds
                .windows(2)
                .map(|w| {
                    let d = w[1] - w[0];
                    d * (d + 1) / 2
                })
                .sum(),
        }
    }

    /// True when some coefficient is stored densely.
    pub fn has_dense(&self) -> bool {
        match self {
            SymLinearMap::General { mats, .. } => mats.iter().any(SymMatrix::is_dense),
            _ => false,
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("apply", self.n(), x.nrows())?;
        check_dim("apply", self.n(), x.ncols())?;
        Ok(match self {
            SymLinearMap::General { mats, .. } => {
                DVector::from_iterator(mats.len(), mats.iter().map(|a| a.inner_dense(x)))
            }
            SymLinearMap::Diag { n } => DVector::from_iterator(*n, (0..*n).map(|i| x[(i, i)])),
            SymLinearMap::Trace { .. } => DVector::from_element(1, x.trace()),
            SymLinearMap::Entries { pairs, .. } => DVector::from_iterator(
                pairs.len(),
                pairs.iter().map(|&(i, j)| 0.5 * (x[(i, j)] + x[(j, i)])),
            ),
            SymLinearMap::BlockIdentity { bounds, .. } => {
                let mut out = Vec::with_capacity(self.m());
                for_each_block_entry(bounds, |i, j| out.push(0.5 * (x[(i, j)] + x[(j, i)])));
                DVector::from_vec(out)
            }
        })
    }

    /// `A(R^T R)` computed from the factor.
    pub fn apply_factored(&self, r: &Factor) -> Result<DVector<f64>> {
        check_dim("apply_factored", self.n(), r.ncols())?;
        Ok(match self {
            SymLinearMap::General { mats, .. } => {
                DVector::from_iterator(mats.len(), mats.iter().map(|a| a.inner_factored(r)))
            }
            SymLinearMap::Diag { n } => {
                DVector::from_iterator(*n, (0..*n).map(|i| r.column(i).norm_squared()))
            }
            SymLinearMap::Trace { .. } => DVector::from_element(1, r.norm_squared()),
            SymLinearMap::Entries { pairs, .. } => DVector::from_iterator(
                pairs.len(),
                pairs.iter().map(|&(i, j)| r.column(i).dot(&r.column(j))),
            ),
            SymLinearMap::BlockIdentity { bounds, .. } => {
                let mut out = Vec::with_capacity(self.m());
                for_each_block_entry(bounds, |i, j| out.push(r.column(i).dot(&r.column(j))));
                DVector::from_vec(out)
            }
        })
    }

    /// `A(U^T R + R^T U)` computed from the two factors.
    pub fn apply_sym_product(&self, u: &Factor, r: &Factor) -> Result<DVector<f64>> {
        check_dim("apply_sym_product", self.n(), r.ncols())?;
        check_dim("apply_sym_product", r.ncols(), u.ncols())?;
        check_dim("apply_sym_product", r.nrows(), u.nrows())?;
        let pair = |i: usize, j: usize| u.column(i).dot(&r.column(j)) + r.column(i).dot(&u.column(j));
        Ok(match self {
            SymLinearMap::General { mats, .. } => {
                DVector::from_iterator(mats.len(), mats.iter().map(|a| a.sym_product_inner(u, r)))
            }
            SymLinearMap::Diag { n } => DVector::from_iterator(*n, (0..*n).map(|i| pair(i, i))),
            SymLinearMap::Trace { .. } => DVector::from_element(1, 2.0 * u.dot(r)),
            SymLinearMap::Entries { pairs, .. } => {
                DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| pair(i, j)))
            }
            SymLinearMap::BlockIdentity { bounds, .. } => {
                let mut out = Vec::with_capacity(self.m());
                for_each_block_entry(bounds, |i, j| out.push(pair(i, j)));
                DVector::from_vec(out)
            }
        })
    }

    /// `A^*(y) = sum_i y_i A_i`.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<SymMatrix> {
        check_dim("adjoint", self.m(), y.len())?;
        let n = self.n();
        Ok(match self {
            SymLinearMap::General { mats, .. } => {
                if self.has_dense() || mats.iter().any(|a| matches!(a, SymMatrix::RankOne { .. })) {
                    let mut out = DMatrix::zeros(n, n);
                    for (a, &yi) in mats.iter().zip(y.iter()) {
                        a.add_to_dense(&mut out, yi);
                    }
                    SymMatrix::Dense(out)
                } else {
                    let mut trip = Vec::new();
                    for (a, &yi) in mats.iter().zip(y.iter()) {
                        if let SymMatrix::Sparse(s) = a {
                            trip.extend(s.entries.iter().map(|&(i, j, v)| (i, j, yi * v)));
                        }
                    }
                    SymMatrix::sparse(n, trip)?
                }
            }
            SymLinearMap::Diag { .. } => SymMatrix::Sparse(SparseSym::diagonal(y)),
            SymLinearMap::Trace { .. } => {
                SymMatrix::Sparse(SparseSym::diagonal(&DVector::from_element(n, y[0])))
            }
            SymLinearMap::Entries { pairs, .. } => SymMatrix::sparse(
                n,
                pairs
                    .iter()
                    .zip(y.iter())
                    .map(|(&(i, j), &v)| if i == j { (i, i, v) } else { (i, j, 0.5 * v) }),
            )?,
            SymLinearMap::BlockIdentity { bounds, .. } => {
                let mut trip = Vec::with_capacity(self.m());
                let mut k = 0;
                for_each_block_entry(bounds, |i, j| {
                    trip.push(if i == j { (i, i, y[k]) } else { (i, j, 0.5 * y[k]) });
                    k += 1;
                });
                SymMatrix::sparse(n, trip)?
            }
        })
    }

    /// `R A^*(y)` without forming `A^*(y)` for the structured variants.
    pub fn adjoint_times_factor(&self, y: &DVector<f64>, r: &Factor) -> Result<Factor> {
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        self.add_adjoint_times_factor(y, r, 1.0, &mut out)?;
        Ok(out)
    }

    /// `out += coef * R A^*(y)`.
    pub fn add_adjoint_times_factor(
        &self,
        y: &DVector<f64>,
        r: &Factor,
        coef: f64,
        out: &mut Factor,
    ) -> Result<()> {
        check_dim("adjoint_times_factor", self.m(), y.len())?;
        check_dim("adjoint_times_factor", self.n(), r.ncols())?;
        check_dim("adjoint_times_factor", r.nrows(), out.nrows())?;
        check_dim("adjoint_times_factor", r.ncols(), out.ncols())?;
        let entry = |i: usize, j: usize, yk: f64, out: &mut Factor| {
            if i == j {
                out.column_mut(i).axpy(coef * yk, &r.column(i), 1.0);
            } else {
                let h = 0.5 * coef * yk;
                out.column_mut(j).axpy(h, &r.column(i), 1.0);
                out.column_mut(i).axpy(h, &r.column(j), 1.0);
            }
        };
        match self {
            SymLinearMap::General { mats, .. } => {
                for (a, &yi) in mats.iter().zip(y.iter()) {
                    if yi != 0.0 {
                        a.add_right_mul(r, coef * yi, out);
                    }
                }
            }
            SymLinearMap::Diag { n } => {
                for i in 0..*n {
                    out.column_mut(i).axpy(coef * y[i], &r.column(i), 1.0);
                }
            }
            SymLinearMap::Trace { .. } => *out += r * (coef * y[0]),
            SymLinearMap::Entries { pairs, .. } => {
                for (&(i, j), &yk) in pairs.iter().zip(y.iter()) {
                    entry(i, j, yk, out);
                }
            }
            SymLinearMap::BlockIdentity { bounds, .. } => {
                let mut k = 0;
                for_each_block_entry(bounds, |i, j| {
                    entry(i, j, y[k], out);
                    k += 1;
                });
            }
        }
        Ok(())
    }

    /// `out += coef * A^*(y)` on dense storage.
    pub fn add_adjoint_dense(&self, y: &DVector<f64>, coef: f64, out: &mut DMatrix<f64>) -> Result<()> {
        match self {
            SymLinearMap::General { mats, .. } => {
                check_dim("adjoint", mats.len(), y.len())?;
                for (a, &yi) in mats.iter().zip(y.iter()) {
                    a.add_to_dense(out, coef * yi);
                }
            }
            _ => self.adjoint(y)?.add_to_dense(out, coef),
        }
        Ok(())
    }

    /// `out += coef * A^*(y) x`.
    pub fn add_adjoint_matvec(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
        coef: f64,
        out: &mut DVector<f64>,
    ) -> Result<()> {
        match self {
            SymLinearMap::General { mats, .. } => {
                check_dim("adjoint", mats.len(), y.len())?;
                for (a, &yi) in mats.iter().zip(y.iter()) {
                    a.add_matvec(x, coef * yi, out);
                }
            }
            _ => self.adjoint(y)?.add_matvec(x, coef, out),
        }
        Ok(())
    }
}

pub(crate) fn validate_bounds(n: usize, bounds: &[usize]) -> Result<()> {
    if bounds.len() < 2 || bounds[0] != 0 || *bounds.last().unwrap() != n {
        return Err(SdpError::InvalidParameter(format!(
            "block boundaries must start at 0 and end at {n}"
        )));
    }
    if bounds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SdpError::InvalidParameter(
            "block boundaries must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Visits `(i, j)` with `i <= j` inside each diagonal block in canonical order.
pub(crate) fn for_each_block_entry(bounds: &[usize], mut f: impl FnMut(usize, usize)) {
    for w in bounds.windows(2) {
        for i in w[0]..w[1] {
            for j in i..w[1] {
                f(i, j);
            }
        }
    }
}

/// One summand of a structured symmetric operator.
#[derive(Debug, Clone)]
pub enum SymTerm<'a> {
    Matrix(f64, &'a SymMatrix),
    Owned(f64, SymMatrix),
    /// `A^*(y)`.
    Adjoint(&'a SymLinearMap, DVector<f64>),
    /// `c I`.
    Identity(f64),
    Diag(DVector<f64>),
    /// Block-diagonal matrix over the partition `bounds`.
    Blocks {
        bounds: Vec<usize>,
        blocks: Vec<DMatrix<f64>>,
    },
    /// `coef * (F^T F)^power`.
    Gram {
        coef: f64,
        factor: DMatrix<f64>,
        power: u32,
    },
    /// `coef * (A^T B + B^T A)`.
    Pair {
        coef: f64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
}

/// A symmetric `n x n` operator kept as a sum of structured terms, so that
/// `R M`, `<M, R^T R>` and `M x` can be evaluated without dense storage.
#[derive(Debug, Clone)]
pub struct SymSum<'a> {
    n: usize,
    terms: Vec<SymTerm<'a>>,
}

impl<'a> SymSum<'a> {
    pub fn new(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, term: SymTerm<'a>) {
        self.terms.push(term);
    }

    pub fn terms(&self) -> &[SymTerm<'a>] {
        &self.terms
    }

    /// `out += coef * R M`.
    pub fn add_right_mul(&self, r: &Factor, coef: f64, out: &mut Factor) -> Result<()> {
        for t in &self.terms {
            match t {
                SymTerm::Matrix(c, m) => m.add_right_mul(r, coef * c, out),
                SymTerm::Owned(c, m) => m.add_right_mul(r, coef * c, out),
                SymTerm::Adjoint(map, y) => map.add_adjoint_times_factor(y, r, coef, out)?,
                SymTerm::Identity(c) => *out += r * (coef * c),
                SymTerm::Diag(d) => {
                    for i in 0..self.n {
                        out.column_mut(i).axpy(coef * d[i], &r.column(i), 1.0);
                    }
                }
                SymTerm::Blocks { bounds, blocks } => {
                    for (w, blk) in bounds.windows(2).zip(blocks) {
                        let d = w[1] - w[0];
                        let rb = r.columns(w[0], d).clone_owned();
                        let mut ob = out.columns_mut(w[0], d);
                        ob.gemm(coef, &rb, blk, 1.0);
                    }
                }
                SymTerm::Gram { coef: c, factor, power } => {
                    let mut left = r * factor.transpose();
                    let gram = factor * factor.transpose();
                    for _ in 1..*power {
                        left = &left * &gram;
                    }
                    out.gemm(coef * c, &left, factor, 1.0);
                }
                SymTerm::Pair { coef: c, a, b } => {
                    let ra = r * a.transpose();
                    let rb = r * b.transpose();
                    out.gemm(coef * c, &ra, b, 1.0);
                    out.gemm(coef * c, &rb, a, 1.0);
                }
            }
        }
        Ok(())
    }

    pub fn right_mul(&self, r: &Factor) -> Result<Factor> {
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        self.add_right_mul(r, 1.0, &mut out)?;
        Ok(out)
    }

    /// `<M, R^T R>`.
    pub fn inner_factored(&self, r: &Factor) -> Result<f64> {
        Ok(self.right_mul(r)?.dot(r))
    }

    /// `out += coef * M`.
    pub fn add_to_dense(&self, out: &mut DMatrix<f64>, coef: f64) -> Result<()> {
        for t in &self.terms {
            match t {
                SymTerm::Matrix(c, m) => m.add_to_dense(out, coef * c),
                SymTerm::Owned(c, m) => m.add_to_dense(out, coef * c),
                SymTerm::Adjoint(map, y) => map.add_adjoint_dense(y, coef, out)?,
                SymTerm::Identity(c) => {
                    for i in 0..self.n {
                        out[(i, i)] += coef * c;
                    }
                }
                SymTerm::Diag(d) => {
                    for i in 0..self.n {
                        out[(i, i)] += coef * d[i];
                    }
                }
                SymTerm::Blocks { bounds, blocks } => {
                    for (w, blk) in bounds.windows(2).zip(blocks) {
                        let d = w[1] - w[0];
                        let mut view = out.view_mut((w[0], w[0]), (d, d));
                        view += blk * coef;
                    }
                }
                SymTerm::Gram { coef: c, factor, power } => {
                    let gram = factor * factor.transpose();
                    let mut mid = DMatrix::identity(gram.nrows(), gram.nrows());
                    for _ in 1..*power {
                        mid = &mid * &gram;
                    }
                    let left = factor.transpose() * mid;
                    out.gemm(coef * c, &left, factor, 1.0);
                }
                SymTerm::Pair { coef: c, a, b } => {
                    out.gemm(coef * c, &a.transpose(), b, 1.0);
                    out.gemm(coef * c, &b.transpose(), a, 1.0);
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n, self.n);
        self.add_to_dense(&mut out, 1.0)?;
        Ok(out)
    }

    /// `M x`.
    pub fn matvec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n);
        for t in &self.terms {
            match t {
                SymTerm::Matrix(c, m) => m.add_matvec(x, *c, &mut out),
                SymTerm::Owned(c, m) => m.add_matvec(x, *c, &mut out),
                SymTerm::Adjoint(map, y) => map.add_adjoint_matvec(y, x, 1.0, &mut out)?,
                SymTerm::Identity(c) => out.axpy(*c, x, 1.0),
                SymTerm::Diag(d) => out += d.component_mul(x),
                SymTerm::Blocks { bounds, blocks } => {
                    for (w, blk) in bounds.windows(2).zip(blocks) {
                        let d = w[1] - w[0];
                        let xb = x.rows(w[0], d).clone_owned();
                        let mut ob = out.rows_mut(w[0], d);
                        ob.gemv(1.0, blk, &xb, 1.0);
                    }
                }
                SymTerm::Gram { coef, factor, power } => {
                    let mut v = factor * x;
                    let gram = factor * factor.transpose();
                    for _ in 1..*power {
                        v = &gram * v;
                    }
                    out.gemv_tr(*coef, factor, &v, 1.0);
                }
                SymTerm::Pair { coef, a, b } => {
                    let bx = b * x;
                    let ax = a * x;
                    out.gemv_tr(*coef, a, &bx, 1.0);
                    out.gemv_tr(*coef, b, &ax, 1.0);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    fn random_sparse(n: usize, nnz: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let trip: Vec<_> = (0..nnz)
            .map(|_| {
                (
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        SymMatrix::sparse(n, trip).unwrap()
    }

    fn all_maps(n: usize, rng: &mut ChaCha8Rng) -> Vec<SymLinearMap> {
        vec![
            SymLinearMap::Diag { n },
            SymLinearMap::Trace { n },
            SymLinearMap::entries(n, vec![(1, 0), (3, 2), (4, 4), (0, 5)]).unwrap(),
            SymLinearMap::block_identity(n, vec![0, 2, 3, n]).unwrap(),
            SymLinearMap::general(
                n,
                vec![
                    random_sparse(n, 5, rng),
                    random_sparse(n, 7, rng),
                    SymMatrix::Dense(random_dense_sym(n, rng)),
                    SymMatrix::RankOne {
                        scale: -0.7,
                        v: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
                    },
                ],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn diag_trace_entries_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            SymLinearMap::Diag { n: 3 }.apply(&i3).unwrap(),
            DVector::from_vec(vec![1.0, 1.0, 1.0])
        );
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(SymLinearMap::Trace { n: 3 }.apply(&z).unwrap()[0], 0.0);
        let mut x = DMatrix::<f64>::zeros(3, 3);
        x[(1, 0)] = 0.7;
        x[(0, 1)] = 0.7;
        let e = SymLinearMap::entries(3, vec![(1, 0)]).unwrap();
        assert_eq!(e.apply(&x).unwrap()[0], 0.7);
        // adjoint of a single off-diagonal coefficient: 1/2 on both sides
        let adj = e.adjoint(&DVector::from_vec(vec![1.0])).unwrap().to_dense();
        assert_eq!(adj[(1, 0)], 0.5);
        assert_eq!(adj[(0, 1)], 0.5);
        assert_eq!(adj[(0, 0)], 0.0);
    }

    #[test]
    fn factored_examples() {
        let r = DMatrix::<f64>::identity(2, 2);
        assert_eq!(
            SymLinearMap::Diag { n: 2 }.apply_factored(&r).unwrap(),
            DVector::from_vec(vec![1.0, 1.0])
        );
        let r = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!((SymLinearMap::Trace { n: 3 }.apply_factored(&r).unwrap()[0] - 3.0).abs() < 1e-15);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(
            SymLinearMap::Diag { n: 3 }.adjoint(&y).unwrap().to_dense(),
            DMatrix::identity(3, 3)
        );
        let y = DVector::from_vec(vec![2.0, -1.0, 0.5]);
        let scaled = SymLinearMap::Diag { n: 3 }.adjoint_times_factor(&y, &r).unwrap();
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(scaled[(i, j)], r[(i, j)] * y[j]);
            }
        }
    }

    #[test]
    fn general_sparse_factored_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let map = SymLinearMap::general(n, vec![random_sparse(n, 6, &mut rng), random_sparse(n, 4, &mut rng)])
            .unwrap();
        let r = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        let x = r.transpose() * &r;
        let a = map.apply(&x).unwrap();
        let b = map.apply_factored(&r).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn adjoint_identity_and_factored_paths_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        for map in all_maps(n, &mut rng) {
            let x = random_dense_sym(n, &mut rng);
            let y = DVector::from_fn(map.m(), |_, _| rng.random_range(-1.0..1.0));
            let lhs = map.apply(&x).unwrap().dot(&y);
            let rhs = map.adjoint(&y).unwrap().inner_dense(&x);
            assert!((lhs - rhs).abs() < 1e-12, "{map:?}");

            let r = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
            let u = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
            let xr = r.transpose() * &r;
            assert!((map.apply(&xr).unwrap() - map.apply_factored(&r).unwrap()).amax() < 1e-12);
            let d = u.transpose() * &r + r.transpose() * &u;
            assert!((map.apply(&d).unwrap() - map.apply_sym_product(&u, &r).unwrap()).amax() < 1e-12);

            let dense_adj = map.adjoint(&y).unwrap().to_dense();
            let expect = &r * &dense_adj;
            assert!((map.adjoint_times_factor(&y, &r).unwrap() - expect).amax() < 1e-12);

            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let mut mv = DVector::zeros(n);
            map.add_adjoint_matvec(&y, &v, 1.0, &mut mv).unwrap();
            assert!((mv - &dense_adj * &v).amax() < 1e-12);
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        for map in all_maps(n, &mut rng) {
            let x = random_dense_sym(n, &mut rng);
            let z = random_dense_sym(n, &mut rng);
            let (a, b) = (0.3, -1.7);
            let lhs = map.apply(&(&x * a + &z * b)).unwrap();
            let rhs = map.apply(&x).unwrap() * a + map.apply(&z).unwrap() * b;
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_multiplier_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let r = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        for map in all_maps(n, &mut rng) {
            let y = DVector::zeros(map.m());
            assert_eq!(map.adjoint(&y).unwrap().to_dense().amax(), 0.0);
            assert_eq!(map.adjoint_times_factor(&y, &r).unwrap().amax(), 0.0);
        }
    }

    #[test]
    fn dimension_errors() {
        let map = SymLinearMap::Diag { n: 3 };
        assert!(map.apply(&DMatrix::zeros(2, 2)).is_err());
        assert!(map.adjoint(&DVector::zeros(2)).is_err());
        assert!(map.apply_factored(&DMatrix::zeros(2, 4)).is_err());
        assert!(SymLinearMap::block_identity(4, vec![0, 3, 2, 4]).is_err());
        assert!(SymLinearMap::block_identity(4, vec![0, 2]).is_err());
    }

    #[test]
    fn sparse_dedup_and_canonical() {
        let s = SparseSym::new(3, vec![(0, 1, 1.0), (1, 0, 2.0), (2, 2, 1.0)]).unwrap();
        assert_eq!(s.entries(), &[(1, 0, 3.0), (2, 2, 1.0)]);
        assert!(SparseSym::new(2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseSym::new(2, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn symsum_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 7;
        let map = SymLinearMap::entries(n, vec![(1, 0), (5, 3)]).unwrap();
        let c = random_sparse(n, 9, &mut rng);
        let f = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let mut s = SymSum::new(n);
        s.push(SymTerm::Matrix(2.0, &c));
        s.push(SymTerm::Adjoint(&map, DVector::from_vec(vec![0.3, -1.0])));
        s.push(SymTerm::Identity(0.4));
        s.push(SymTerm::Diag(DVector::from_fn(n, |i, _| i as f64)));
        s.push(SymTerm::Blocks {
            bounds: vec![0, 3, n],
            blocks: vec![random_dense_sym(3, &mut rng), random_dense_sym(n - 3, &mut rng)],
        });
        s.push(SymTerm::Gram { coef: 0.5, factor: f.clone(), power: 2 });
        s.push(SymTerm::Pair { coef: -0.25, a: f.clone(), b: g.clone() });
        let dense = s.to_dense().unwrap();
        assert!((&dense - dense.transpose()).amax() < 1e-12);
        let r = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        assert!((s.right_mul(&r).unwrap() - &r * &dense).amax() < 1e-12);
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        assert!((s.matvec(&x).unwrap() - &dense * &x).amax() < 1e-12);
        let xr = r.transpose() * &r;
        assert!((s.inner_factored(&r).unwrap() - dense.dot(&xr)).abs() < 1e-12);
    }
}
