//! rudy graph text: a header `n m` followed by `m` lines `i j w` with
//! 1-based vertex ids. This is the layout of the Gset collection.

use std::collections::HashSet;

use crate::apps::Graph;
use crate::error::{Result, SdpError};

fn perr(line: usize, msg: impl Into<String>) -> SdpError {
    SdpError::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| perr(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| perr(line, format!("bad {what} `{tok}`")))
}

pub fn parse_graph_rudy(text: &str) -> Result<Graph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty input"))?;
    let mut tok = header.split_whitespace();
    let n: usize = field(tok.next(), hline, "vertex count")?;
    let m: usize = field(tok.next(), hline, "edge count")?;
    if tok.next().is_some() {
        return Err(perr(hline, "header must be `n m`"));
    }

    let mut edges = Vec::with_capacity(m);
    let mut seen = HashSet::with_capacity(m);
    let mut last = hline;
    for (ln, l) in lines {
        last = ln;
        if edges.len() == m {
            return Err(perr(ln, format!("more than the {m} edges declared in the header")));
        }
        let mut tok = l.split_whitespace();
        let i: usize = field(tok.next(), ln, "vertex id")?;
        let j: usize = field(tok.next(), ln, "vertex id")?;
        let w: f64 = match tok.next() {
            Some(t) => field(Some(t), ln, "weight")?,
            None => 1.0,
        };
        if tok.next().is_some() {
            return Err(perr(ln, "expected `i j w`"));
        }
        if i == 0 || j == 0 || i > n || j > n {
            return Err(perr(ln, format!("vertex id out of range 1..={n}")));
        }
        if i == j {
            return Err(perr(ln, format!("self-loop at vertex {i}")));
        }
        if !w.is_finite() {
            return Err(perr(ln, "non-finite weight"));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(perr(ln, format!("duplicate edge ({i}, {j})")));
        }
        edges.push((i - 1, j - 1, w));
    }
    if edges.len() != m {
        return Err(perr(last, format!("header declares {m} edges, found {}", edges.len())));
    }
    Graph::new(n, edges)
}

pub fn write_graph_rudy(g: &Graph) -> String {
    let mut out = format!("{} {}\n", g.n(), g.num_edges());
    for &(i, j, w) in g.edges() {
        out.push_str(&format!("{} {} {}\n", i + 1, j + 1, w));
    }
    out
}
