//! Whitespace-separated dense matrix text, one row per line. Lines starting
//! with `#` are comments.

use nalgebra::DMatrix;

use crate::error::{Result, SdpError};

pub fn parse_dense_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let line = k + 1;
        let row = l
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| SdpError::Parse { line, msg: format!("bad entry `{t}`") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(SdpError::Parse {
                    line,
                    msg: format!("row has {} entries, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SdpError::Parse { line: 1, msg: "no matrix rows".into() });
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Square and symmetric up to `1e-12` relative to the largest entry.
pub fn parse_symmetric_matrix(text: &str) -> Result<DMatrix<f64>> {
    let m = parse_dense_matrix(text)?;
    if m.nrows() != m.ncols() {
        return Err(SdpError::DimensionMismatch { context: "square matrix file", expected: m.nrows(), got: m.ncols() });
    }
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(SdpError::InvalidParameter(format!("matrix is not symmetric (max asymmetry {asym:.3e})")));
    }
    Ok(m)
}

pub fn write_dense_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_with_comments() {
        let m = parse_dense_matrix("# G\n1 0.5\n\n0.5 1\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        assert!(matches!(parse_dense_matrix("1 2\n3\n"), Err(SdpError::Parse { line: 2, .. })));
        assert!(matches!(parse_dense_matrix("1 nan\n"), Err(SdpError::Parse { line: 1, .. })));
        assert!(parse_dense_matrix("# nothing\n").is_err());
    }

    #[test]
    fn symmetry_checked() {
        assert!(parse_symmetric_matrix("1 2\n2 1").is_ok());
        assert!(parse_symmetric_matrix("1 2\n2.1 1").is_err());
        assert!(parse_symmetric_matrix("1 2 3\n2 1 3").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let m = DMatrix::from_row_slice(3, 4, &vals);
            prop_assert_eq!(parse_dense_matrix(&write_dense_matrix(&m)).unwrap(), m);
        }
    }
}
