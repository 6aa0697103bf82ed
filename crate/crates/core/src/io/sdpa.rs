//! Subset of the SDPA sparse (`.dat-s`) format.
//!
//! Layout after optional comment lines starting with `"` or `*`:
//! `m`, the block count, the block sizes, the vector `b`, then entries
//! `matno blkno i j value` with `matno = 0` for `F0`. Block sizes may be
//! negative, meaning a diagonal (LP) block.
//!
//! Accepted: one PSD block plus any number of diagonal blocks. The blocks are
//! laid out along the diagonal of a single matrix of order `sum |size|`. Since
//! no coefficient touches the off-diagonal blocks this embedding leaves the
//! feasible set unchanged, and a diagonal block becomes the diagonal of a
//! principal submatrix. Two or more PSD blocks are rejected.
//!
//! The problem is read in the usual primal convention
//! `max <F0, X> s.t. <F_i, X> = b_i, X psd`, so the solver minimizes
//! `<-F0, X>` and reports the negated optimal value.

use std::collections::HashSet;

use nalgebra::DVector;

use crate::apps::maxcut::default_rank;
use crate::error::{Result, SdpError};
use crate::linmap::{SymLinearMap, SymMatrix};
use crate::manifold::ManifoldDescriptor;
use crate::model::{SdpProblem, SmoothOracle};
use crate::prox::ProxOracle;

#[derive(Debug, Clone, PartialEq)]
pub struct SdpaData {
    /// Order of the embedded matrix, `sum |size|`.
    pub n: usize,
    /// Block sizes as written; negative entries are diagonal blocks.
    pub blocks: Vec<i64>,
    /// `F0`, the objective of the maximization.
    pub c: SymMatrix,
    pub a: Vec<SymMatrix>,
    pub b: DVector<f64>,
}

fn perr(line: usize, msg: impl Into<String>) -> SdpError {
    SdpError::Parse { line, msg: msg.into() }
}

fn is_comment(l: &str) -> bool {
    l.starts_with('"') || l.starts_with('*')
}

/// Leading numeric tokens of a header line; separators `{ } ( ) ,` count as
/// blanks and anything after the first non-number (e.g. `=mdim`) is ignored.
fn header_numbers(l: &str) -> Vec<&str> {
    l.split(|c: char| c.is_whitespace() || "{}(),".contains(c))
        .filter(|t| !t.is_empty())
        .take_while(|t| t.parse::<f64>().is_ok())
        .collect()
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| perr(line, format!("bad {what} `{tok}`")))
}

pub fn parse_sdpa_sparse(text: &str) -> Result<SdpaData> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !is_comment(l))
        .peekable();

    // header tokens, in order: m, nblocks, sizes, b
    let mut header: Vec<(usize, &str)> = Vec::new();
    let mut need = 2usize;
    let mut m = None;
    let mut nblocks = None;
    let mut last_line = 1;
    while header.len() < need {
        let (ln, l) = lines.next().ok_or_else(|| perr(last_line, "truncated header"))?;
        last_line = ln;
        let nums = header_numbers(l);
        if nums.is_empty() {
            return Err(perr(ln, "expected numbers in the header"));
        }
        header.extend(nums.into_iter().map(|t| (ln, t)));
        if m.is_none() && !header.is_empty() {
            let (l0, t0) = header[0];
            m = Some(parse_num::<usize>(t0, l0, "constraint count")?);
        }
        if nblocks.is_none() && header.len() >= 2 {
            let (l1, t1) = header[1];
            let nb = parse_num::<usize>(t1, l1, "block count")?;
            if nb == 0 {
                return Err(perr(l1, "block count must be positive"));
            }
            nblocks = Some(nb);
            need = 2 + nb + m.unwrap_or(0);
        }
    }
    let (m, nblocks) = (m.unwrap_or(0), nblocks.unwrap_or(0));
    if header.len() > need {
        return Err(perr(header[need].0, "unexpected extra header values"));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for &(ln, t) in &header[2..2 + nblocks] {
        let s: i64 = parse_num(t, ln, "block size")?;
        if s == 0 {
            return Err(perr(ln, "block size 0"));
        }
        blocks.push(s);
    }
    let psd_blocks = blocks.iter().filter(|&&s| s > 0).count();
    if psd_blocks > 1 {
        return Err(SdpError::Unsupported(format!(
            "{psd_blocks} PSD blocks; only one PSD block plus diagonal blocks is accepted"
        )));
    }
    let mut b = DVector::zeros(m);
    for (k, &(ln, t)) in header[2 + nblocks..].iter().enumerate() {
        b[k] = parse_num(t, ln, "rhs value")?;
        if !f64::is_finite(b[k]) {
            return Err(perr(ln, "non-finite rhs value"));
        }
    }

    let mut offsets = Vec::with_capacity(nblocks);
    let mut n = 0usize;
    for &s in &blocks {
        offsets.push(n);
        n += s.unsigned_abs() as usize;
    }

    let mut trips: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m + 1];
    let mut seen = HashSet::new();
    for (ln, l) in lines {
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 5 {
            return Err(perr(ln, "expected `matno blkno i j value`"));
        }
        let mat: usize = parse_num(tok[0], ln, "matrix number")?;
        let blk: usize = parse_num(tok[1], ln, "block number")?;
        let i: usize = parse_num(tok[2], ln, "row index")?;
        let j: usize = parse_num(tok[3], ln, "column index")?;
        let v: f64 = parse_num(tok[4], ln, "value")?;
        if mat > m {
            return Err(perr(ln, format!("matrix number {mat} out of range 0..={m}")));
        }
        if blk == 0 || blk > nblocks {
            return Err(perr(ln, format!("block number {blk} out of range 1..={nblocks}")));
        }
        let size = blocks[blk - 1];
        let dim = size.unsigned_abs() as usize;
        if i == 0 || j == 0 || i > dim || j > dim {
            return Err(perr(ln, format!("index ({i}, {j}) out of range for block {blk} of order {dim}")));
        }
        if size < 0 && i != j {
            return Err(perr(ln, format!("off-diagonal entry in diagonal block {blk}")));
        }
        if !v.is_finite() {
            return Err(perr(ln, "non-finite value"));
        }
        let (gi, gj) = (offsets[blk - 1] + i - 1, offsets[blk - 1] + j - 1);
        let key = (mat, gi.max(gj), gi.min(gj));
        if !seen.insert(key) {
            return Err(perr(ln, format!("repeated entry ({i}, {j}) of matrix {mat}")));
        }
        trips[mat].push((gi, gj, v));
    }
    let mut mats = trips.into_iter().map(|t| SymMatrix::sparse(n, t));
    let c = mats.next().expect("F0 slot")?;
    let a = mats.collect::<Result<Vec<_>>>()?;
    Ok(SdpaData { n, blocks, c, a, b })
}

pub fn write_sdpa_sparse(d: &SdpaData) -> Result<String> {
    let mut out = format!("{}\n{}\n", d.a.len(), d.blocks.len());
    let sizes: Vec<String> = d.blocks.iter().map(|s| s.to_string()).collect();
    out.push_str(&sizes.join(" "));
    out.push('\n');
    let rhs: Vec<String> = d.b.iter().map(|v| v.to_string()).collect();
    out.push_str(&rhs.join(" "));
    out.push('\n');
    let mut starts = Vec::new();
    let mut off = 0usize;
    for &s in &d.blocks {
        starts.push(off);
        off += s.unsigned_abs() as usize;
    }
    let locate = |g: usize| -> usize { starts.iter().rposition(|&s| s <= g).expect("offset 0 exists") };
    for (k, mat) in std::iter::once(&d.c).chain(d.a.iter()).enumerate() {
        let SymMatrix::Sparse(s) = mat else {
            return Err(SdpError::Unsupported("only sparse coefficient matrices can be written".into()));
        };
        for &(i, j, v) in s.entries() {
            // stored lower triangle; written as the upper one
            let blk = locate(i);
            if locate(j) != blk {
                return Err(SdpError::Unsupported(format!("entry ({i}, {j}) couples two blocks")));
            }
            let base = starts[blk];
            out.push_str(&format!("{} {} {} {} {}\n", k, blk + 1, j - base + 1, i - base + 1, v));
        }
    }
    Ok(out)
}

/// `v` when `m` is `v e_k e_k^T`.
fn single_diag(m: &SymMatrix) -> Option<(usize, f64)> {
    match m {
        SymMatrix::Sparse(s) if s.nnz() == 1 => {
            let (i, j, v) = s.entries()[0];
            (i == j && v != 0.0).then_some((i, v))
        }
        _ => None,
    }
}

/// `v` when `m` is `v I`.
fn scaled_identity(m: &SymMatrix) -> Option<f64> {
    match m {
        SymMatrix::Sparse(s) if s.nnz() == m.n() && m.n() > 0 => {
            let v = s.entries()[0].2;
            (v != 0.0 && s.entries().iter().all(|&(i, j, w)| i == j && w == v)).then_some(v)
        }
        _ => None,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

impl SdpaData {
    /// Builds the minimization problem. Constraints that fix every diagonal
    /// entry to one become the oblique manifold; a constraint `tr(X) = t`
    /// (up to scaling) becomes the sphere of radius `sqrt(t)`. Everything
    /// else stays an explicit equality. Without either structure the input
    /// is unsupported.
    pub fn to_problem(&self, p: Option<usize>) -> Result<SdpProblem> {
        let n = self.n;
        let m = self.a.len();
        let mut diag_of = vec![None; n];
        for (k, mat) in self.a.iter().enumerate() {
            if let Some((i, v)) = single_diag(mat) {
                if diag_of[i].is_none() && close(self.b[k] / v, 1.0) {
                    diag_of[i] = Some(k);
                }
            }
        }
        let (manifold, used): (ManifoldDescriptor, Vec<usize>) = if diag_of.iter().all(Option::is_some) {
            (ManifoldDescriptor::oblique(n), diag_of.into_iter().flatten().collect())
        } else if let Some((k, t)) = self
            .a
            .iter()
            .enumerate()
            .find_map(|(k, mat)| scaled_identity(mat).map(|v| (k, self.b[k] / v)).filter(|&(_, t)| t > 0.0))
        {
            (ManifoldDescriptor::scaled_sphere(n, t)?, vec![k])
        } else {
            return Err(SdpError::Unsupported(
                "no unit-diagonal or trace constraint to build a manifold from".into(),
            ));
        };
        let rest: Vec<usize> = (0..m).filter(|k| !used.contains(k)).collect();
        let p = p.unwrap_or_else(|| default_rank(n, used.len() + rest.len()));
        let c = match &self.c {
            SymMatrix::Sparse(s) => SymMatrix::sparse(n, s.entries().iter().map(|&(i, j, v)| (i, j, -v)))?,
            other => SymMatrix::dense(-other.to_dense())?,
        };
        let prob = SdpProblem::new(SmoothOracle::Linear(c), ProxOracle::Zero, manifold, p)?;
        if rest.is_empty() {
            return Ok(prob);
        }
        let mats = rest.iter().map(|&k| self.a[k].clone()).collect();
        let rhs = DVector::from_iterator(rest.len(), rest.iter().map(|&k| self.b[k]));
        prob.with_equalities(SymLinearMap::general(n, mats)?, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\"a 2x2 example\n* another comment\n1\n1\n2\n1.0\n0 1 1 1 1.0\n0 1 1 2 0.5\n1 1 1 1 1.0\n1 1 2 2 1.0\n";

    // [TRIVIAL] format definition
    #[test]
    fn minimal_example_parsed_exactly() {
        let d = parse_sdpa_sparse(MINIMAL).unwrap();
        assert_eq!(d.n, 2);
        assert_eq!(d.blocks, vec![2]);
        assert_eq!(d.b.as_slice(), &[1.0]);
        assert_eq!(d.c, SymMatrix::sparse(2, [(0, 0, 1.0), (1, 0, 0.5)]).unwrap());
        assert_eq!(d.a, vec![SymMatrix::identity(2)]);
    }

    #[test]
    fn sdplib_style_header() {
        let txt = "2 =mdim\n1 =nblocks\n{2}\n{1.0, 2.0}\n1 1 1 1 1\n2 1 2 2 1\n";
        let d = parse_sdpa_sparse(txt).unwrap();
        assert_eq!(d.b.as_slice(), &[1.0, 2.0]);
        assert_eq!(d.a.len(), 2);
        assert_eq!(d.c, SymMatrix::zeros(2));
    }

    #[test]
    fn diagonal_block_embedded() {
        let txt = "1\n2\n2 -2\n3\n1 1 1 1 1\n1 2 2 2 2\n0 2 1 1 -1\n";
        let d = parse_sdpa_sparse(txt).unwrap();
        assert_eq!(d.n, 4);
        assert_eq!(d.a[0], SymMatrix::sparse(4, [(0, 0, 1.0), (3, 3, 2.0)]).unwrap());
        assert_eq!(d.c, SymMatrix::sparse(4, [(2, 2, -1.0)]).unwrap());
        let bad = "1\n2\n2 -2\n3\n1 2 1 2 1\n";
        assert!(matches!(parse_sdpa_sparse(bad), Err(SdpError::Parse { line: 5, .. })));
    }

    #[test]
    fn rejections() {
        let two_psd = "1\n2\n2 3\n1\n1 1 1 1 1\n";
        assert!(matches!(parse_sdpa_sparse(two_psd), Err(SdpError::Unsupported(_))));
        let out_of_range = "1\n1\n2\n1\n1 1 3 1 1\n";
        assert!(matches!(parse_sdpa_sparse(out_of_range), Err(SdpError::Parse { line: 5, .. })));
        let bad_mat = "1\n1\n2\n1\n2 1 1 1 1\n";
        assert!(matches!(parse_sdpa_sparse(bad_mat), Err(SdpError::Parse { line: 5, .. })));
        let repeated = "1\n1\n2\n1\n1 1 1 2 1\n1 1 2 1 1\n";
        assert!(matches!(parse_sdpa_sparse(repeated), Err(SdpError::Parse { line: 6, .. })));
        assert!(parse_sdpa_sparse("1\n1\n").is_err());
        assert!(parse_sdpa_sparse("1\n1\n2\n1\n1 1 1\n").is_err());
    }

    #[test]
    fn write_parse_roundtrip() {
        let txt = "2\n2\n3 -1\n1 2.5\n0 1 1 2 -0.25\n0 2 1 1 3\n1 1 1 1 1\n1 1 2 3 0.5\n2 1 3 3 1\n2 2 1 1 1e-3\n";
        let d = parse_sdpa_sparse(txt).unwrap();
        let back = parse_sdpa_sparse(&write_sdpa_sparse(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn manifold_detection() {
        // K3 max-cut in the maximization form: F0 = L/4
        let mut txt = String::from("3\n1\n3\n1 1 1\n");
        for (i, j, v) in [(1, 1, 0.5), (2, 2, 0.5), (3, 3, 0.5), (1, 2, -0.25), (1, 3, -0.25), (2, 3, -0.25)] {
            txt.push_str(&format!("0 1 {i} {j} {v}\n"));
        }
        for k in 1..=3 {
            txt.push_str(&format!("{k} 1 {k} {k} 1\n"));
        }
        let prob = parse_sdpa_sparse(&txt).unwrap().to_problem(None).unwrap();
        assert_eq!(prob.manifold(), &ManifoldDescriptor::oblique(3));
        assert_eq!(prob.m(), 0);

        let d = parse_sdpa_sparse("2\n1\n3\n2 0\n1 1 1 1 2\n1 1 2 2 2\n1 1 3 3 2\n2 1 1 2 1\n0 1 1 3 1\n").unwrap();
        let prob = d.to_problem(Some(2)).unwrap();
        assert_eq!(prob.manifold(), &ManifoldDescriptor::FrobSphere { n: 3, radius_sq: 1.0 });
        assert_eq!(prob.m(), 1);
        assert_eq!(prob.p(), 2);

        let d = parse_sdpa_sparse("1\n1\n2\n1\n1 1 1 2 1\n").unwrap();
        assert!(matches!(d.to_problem(None), Err(SdpError::Unsupported(_))));
    }
}
