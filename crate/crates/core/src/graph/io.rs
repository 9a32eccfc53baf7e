//! Plain-text graph files.
//!
//! - edge list: one `u v` pair per line, 0-based ids, `#` starts a comment
//! - labels: `node_id label` per line
//! - permutation: one new id per line; line `i` holds the new id of old node `i`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{validate_permutation, CsrGraph};
use crate::error::{Error, Result};

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

fn parse_id(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("expected a non-negative integer, found {tok:?}"),
    })
}

pub fn parse_edge_list(text: &str) -> Result<CsrGraph> {
    let mut edges = Vec::new();
    let mut max_id = None;
    for (line, toks) in data_lines(text) {
        if toks.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected `u v`, found {} fields", toks.len()),
            });
        }
        let u = parse_id(toks[0], line)?;
        let v = parse_id(toks[1], line)?;
        max_id = Some(max_id.unwrap_or(0).max(u).max(v));
        edges.push((u, v));
    }
    let Some(max_id) = max_id else {
        return Err(Error::Graph("edge list is empty: a 0-node graph".into()));
    };
    CsrGraph::from_edges(max_id + 1, &edges)
}

pub fn load_edge_list(path: &Path) -> Result<CsrGraph> {
    parse_edge_list(&fs::read_to_string(path)?)
}

pub fn parse_labels(text: &str, num_nodes: usize) -> Result<Vec<usize>> {
    let mut labels = vec![None; num_nodes];
    for (line, toks) in data_lines(text) {
        if toks.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: "expected `node_id label`".into(),
            });
        }
        let v = parse_id(toks[0], line)?;
        let l = parse_id(toks[1], line)?;
        if v >= num_nodes {
            return Err(Error::Parse {
                line,
                msg: format!("node {v} outside graph of {num_nodes} nodes"),
            });
        }
        labels[v] = Some(l);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(v, l)| l.ok_or_else(|| Error::Graph(format!("node {v} has no label"))))
        .collect()
}

pub fn load_labels(path: &Path, num_nodes: usize) -> Result<Vec<usize>> {
    parse_labels(&fs::read_to_string(path)?, num_nodes)
}

pub fn format_edge_list(graph: &CsrGraph) -> String {
    let mut s = String::new();
    for (u, v) in graph.edges() {
        writeln!(s, "{u} {v}").unwrap();
    }
    s
}

pub fn format_labels(labels: &[usize]) -> String {
    let mut s = String::new();
    for (v, l) in labels.iter().enumerate() {
        writeln!(s, "{v} {l}").unwrap();
    }
    s
}

pub fn write_edge_list(graph: &CsrGraph, path: &Path) -> Result<()> {
    Ok(fs::write(path, format_edge_list(graph))?)
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    Ok(fs::write(path, format_labels(labels))?)
}

pub fn write_permutation(perm: &[usize], path: &Path) -> Result<()> {
    let mut s = String::with_capacity(perm.len() * 6);
    for p in perm {
        writeln!(s, "{p}").unwrap();
    }
    Ok(fs::write(path, s)?)
}

pub fn read_permutation(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let perm = data_lines(&text)
        .map(|(line, toks)| {
            if toks.len() != 1 {
                return Err(Error::Parse {
                    line,
                    msg: "expected one id per line".into(),
                });
            }
            parse_id(toks[0], line)
        })
        .collect::<Result<Vec<_>>>()?;
    validate_permutation(&perm, perm.len())?;
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_edge_list("").is_err());
        assert!(parse_edge_list("# only a comment\n\n").is_err());
    }

    #[test]
    fn triangle() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n").unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_arcs(), 6);
    }

    #[test]
    fn malformed_line_number() {
        match parse_edge_list("0 1\n\n1 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_edge_list("0 1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_must_cover_all_nodes() {
        assert_eq!(parse_labels("0 1\n1 0\n", 2).unwrap(), vec![1, 0]);
        assert!(parse_labels("0 1\n", 2).is_err());
        assert!(parse_labels("5 1\n", 2).is_err());
    }

    #[test]
    fn permutation_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("perm.txt");
        write_permutation(&[2, 0, 1], &p).unwrap();
        assert_eq!(read_permutation(&p).unwrap(), vec![2, 0, 1]);
        fs::write(&p, "0\n0\n").unwrap();
        assert!(read_permutation(&p).is_err());
    }
}
