//! Text formats for edges, features and labels.
//!
//! * Edge file: one edge per line, `src<TAB>dst[<TAB>weight]`, 0-based, `#` comments.
//! * Feature file: header `n d`, then `n` lines of `d` space-separated floats.
//! * Label file: one anomalous node index per line.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AnomalyLabels, MultiViewGraph, View};
use crate::error::{Result, SigilError};
use crate::matrix::{Csr, Matrix};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SigilError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| SigilError::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((k + 1, line))
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> SigilError {
    SigilError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Reads an edge list into a symmetric adjacency on `n` nodes.
///
/// Reverse edges are added, duplicates collapse (last weight wins) and
/// self-loops are dropped.
pub fn read_edges(path: &Path, n: usize) -> Result<Csr> {
    let text = read(path)?;
    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (line, content) in content_lines(&text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_err(path, line, format!("expected `src dst [weight]`, got `{content}`")));
        }
        let mut ends = [0usize; 2];
        for (slot, field) in ends.iter_mut().zip(&fields) {
            let index: usize =
                field.parse().map_err(|_| parse_err(path, line, format!("bad node index `{field}`")))?;
            if index >= n {
                return Err(SigilError::NodeOutOfRange { path: path.to_path_buf(), line, index, n });
            }
            *slot = index;
        }
        let weight = match fields.get(2) {
            Some(w) => w.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad weight `{w}`")))?,
            None => 1.0,
        };
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(parse_err(path, line, format!("edge weight must be finite and non-negative, got {weight}")));
        }
        let [a, b] = ends;
        if a != b {
            edges.insert((a.min(b), a.max(b)), weight);
        }
    }
    let mut trip = Vec::with_capacity(edges.len() * 2);
    for (&(a, b), &w) in &edges {
        trip.push((a, b, w));
        trip.push((b, a, w));
    }
    Ok(Csr::from_triplets(n, &trip))
}

pub fn write_edges(path: &Path, adjacency: &Csr) -> Result<()> {
    let mut out = String::new();
    for (i, j, w) in adjacency.triplets() {
        if i < j {
            if w == 1.0 {
                let _ = writeln!(out, "{i}\t{j}");
            } else {
                let _ = writeln!(out, "{i}\t{j}\t{w}");
            }
        }
    }
    write(path, &out)
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let text = read(path)?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing `n d` header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, hline, format!("bad header `{header}`")))?;
    let [n, d] = dims[..] else {
        return Err(parse_err(path, hline, format!("header must be `n d`, got `{header}`")));
    };
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (line, content) in lines {
        let before = data.len();
        for field in content.split_whitespace() {
            let v: f64 = field.parse().map_err(|_| parse_err(path, line, format!("bad float `{field}`")))?;
            data.push(v);
        }
        if data.len() - before != d {
            return Err(parse_err(path, line, format!("expected {d} values, got {}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(SigilError::FeatureRows { path: path.to_path_buf(), expected: n, found: rows });
    }
    Ok(Matrix::from_vec(n, d, data))
}

pub fn write_features(path: &Path, x: &Matrix) -> Result<()> {
    let mut out = String::with_capacity(x.len() * 8);
    let _ = writeln!(out, "{} {}", x.rows(), x.cols());
    for i in 0..x.rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    write(path, &out)
}

pub fn read_labels(path: &Path, n: usize) -> Result<AnomalyLabels> {
    let text = read(path)?;
    let mut flags = vec![false; n];
    for (line, content) in content_lines(&text) {
        let index: usize =
            content.parse().map_err(|_| parse_err(path, line, format!("bad node index `{content}`")))?;
        if index >= n {
            return Err(SigilError::NodeOutOfRange { path: path.to_path_buf(), line, index, n });
        }
        flags[index] = true;
    }
    Ok(AnomalyLabels::new(flags))
}

pub fn write_labels(path: &Path, labels: &AnomalyLabels) -> Result<()> {
    let mut out = String::new();
    for i in labels.indices() {
        let _ = writeln!(out, "{i}");
    }
    write(path, &out)
}

/// Loads one edge file and one feature file per view, plus optional labels.
///
/// The node count comes from the first feature header; every other file is
/// validated against it.
pub fn load_graph(edge_files: &[PathBuf], feature_files: &[PathBuf], label_file: Option<&Path>) -> Result<MultiViewGraph> {
    if edge_files.is_empty() || edge_files.len() != feature_files.len() {
        return Err(SigilError::InvalidConfig(format!(
            "need one edge file and one feature file per view, got {} and {}",
            edge_files.len(),
            feature_files.len()
        )));
    }
    let features: Vec<Matrix> = feature_files.iter().map(|p| read_features(p)).collect::<Result<_>>()?;
    let n = features[0].rows();
    for (x, p) in features.iter().zip(feature_files) {
        if x.rows() != n {
            return Err(SigilError::FeatureRows { path: p.clone(), expected: n, found: x.rows() });
        }
    }
    let views = edge_files
        .iter()
        .zip(features)
        .map(|(ep, x)| View::new(read_edges(ep, n)?, x))
        .collect::<Result<Vec<_>>>()?;
    let labels = label_file.map(|p| read_labels(p, n)).transpose()?;
    MultiViewGraph::new(views, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_files(dir: &Path) -> (Vec<PathBuf>, Vec<PathBuf>) {
        let e = dir.join("v0.edges");
        fs::write(&e, "# path graph\n0\t1\n1\t2\n2\t3\n1\t0\n").unwrap();
        let e1 = dir.join("v1.edges");
        fs::write(&e1, "0\t3\t2.5\n").unwrap();
        let f = dir.join("v0.feat");
        fs::write(&f, "4 2\n1 2\n3 4\n5 6\n7 8\n").unwrap();
        let f1 = dir.join("v1.feat");
        fs::write(&f1, "4 1\n0.1\n0.2\n0.3\n0.4\n").unwrap();
        (vec![e, e1], vec![f, f1])
    }

    #[test]
    fn loads_two_view_path_graph() {
        let dir = tempfile::tempdir().unwrap();
        let (e, f) = path_files(dir.path());
        let labels = dir.path().join("labels");
        fs::write(&labels, "3\n").unwrap();
        let g = load_graph(&e, &f, Some(&labels)).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.view(0).degree(), &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(g.view(1).adjacency().get(3, 0), 2.5);
        assert_eq!(g.feature_dims(), vec![2, 1]);
        assert_eq!(g.labels().unwrap().indices(), vec![3]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (e, f) = path_files(dir.path());
        fs::write(&e[0], "5\t9\n").unwrap();
        let err = load_graph(&e, &f, None).unwrap_err();
        assert!(err.to_string().contains("node index out of range"), "{err}");
    }

    #[test]
    fn feature_row_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (e, f) = path_files(dir.path());
        fs::write(&f[1], "4 1\n0.1\n0.2\n").unwrap();
        assert!(matches!(load_graph(&e, &f, None), Err(SigilError::FeatureRows { found: 2, .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let (e, _) = path_files(dir.path());
        let missing = vec![dir.path().join("nope"), dir.path().join("nope2")];
        assert!(matches!(load_graph(&e, &missing, None), Err(SigilError::Io { .. })));
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (e, f) = path_files(dir.path());
        let g = load_graph(&e, &f, None).unwrap();
        let mut e2 = Vec::new();
        let mut f2 = Vec::new();
        for (a, view) in g.views().iter().enumerate() {
            let ep = dir.path().join(format!("out{a}.edges"));
            let fp = dir.path().join(format!("out{a}.feat"));
            write_edges(&ep, view.adjacency()).unwrap();
            write_features(&fp, view.features()).unwrap();
            e2.push(ep);
            f2.push(fp);
        }
        assert_eq!(load_graph(&e2, &f2, None).unwrap(), g);
    }
}
