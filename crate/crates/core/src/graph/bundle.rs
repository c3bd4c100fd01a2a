//! Graph bundle: a directory of edge/feature/label files described by a
//! flat key-value manifest.
//!
//! ```text
//! views = 2
//! view.0.edges = view0.edges
//! view.0.features = view0.features
//! view.1.edges = view1.edges
//! view.1.features = view1.features
//! labels = labels.txt
//! ```
//!
//! Paths are relative to the manifest's directory. `labels` is optional.

use std::fs;
use std::path::{Path, PathBuf};

use super::io::{load_graph, write_edges, write_features, write_labels};
use super::MultiViewGraph;
use crate::error::{Result, SigilError};
use crate::kv::KeyValues;

pub const MANIFEST_NAME: &str = "graph.bundle";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleManifest {
    pub edge_files: Vec<PathBuf>,
    pub feature_files: Vec<PathBuf>,
    pub label_file: Option<PathBuf>,
}

impl BundleManifest {
    /// Reads a manifest; `path` may be the manifest file or its directory.
    pub fn read(path: &Path) -> Result<(PathBuf, Self)> {
        let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let kv = KeyValues::read(&file)?;
        let views: usize = kv
            .get_parsed("views")?
            .ok_or_else(|| SigilError::InvalidConfig(format!("{}: missing `views`", file.display())))?;
        let mut edge_files = Vec::with_capacity(views);
        let mut feature_files = Vec::with_capacity(views);
        for a in 0..views {
            for (kind, sink) in [("edges", &mut edge_files), ("features", &mut feature_files)] {
                let key = format!("view.{a}.{kind}");
                let rel = kv
                    .get(&key)
                    .ok_or_else(|| SigilError::InvalidConfig(format!("{}: missing `{key}`", file.display())))?;
                sink.push(PathBuf::from(rel));
            }
        }
        let label_file = kv.get("labels").map(PathBuf::from);
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((dir, Self { edge_files, feature_files, label_file }))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut kv = KeyValues::new();
        kv.insert("views", self.edge_files.len());
        for (a, (e, f)) in self.edge_files.iter().zip(&self.feature_files).enumerate() {
            kv.insert(format!("view.{a}.edges"), e.display());
            kv.insert(format!("view.{a}.features"), f.display());
        }
        if let Some(l) = &self.label_file {
            kv.insert("labels", l.display());
        }
        let file = dir.join(MANIFEST_NAME);
        fs::write(&file, kv.render()).map_err(|e| SigilError::io(&file, e))?;
        Ok(file)
    }

    /// All files the bundle refers to, resolved against `dir`.
    pub fn resolved_files(&self, dir: &Path) -> Vec<PathBuf> {
        self.edge_files
            .iter()
            .chain(&self.feature_files)
            .chain(&self.label_file)
            .map(|p| dir.join(p))
            .collect()
    }
}

/// Loads the graph a bundle describes.
pub fn load_bundle(path: &Path) -> Result<MultiViewGraph> {
    let (dir, m) = BundleManifest::read(path)?;
    let edges: Vec<PathBuf> = m.edge_files.iter().map(|p| dir.join(p)).collect();
    let feats: Vec<PathBuf> = m.feature_files.iter().map(|p| dir.join(p)).collect();
    let labels = m.label_file.as_ref().map(|p| dir.join(p));
    load_graph(&edges, &feats, labels.as_deref())
}

/// Writes `graph` into `dir` (created if absent) with the standard file names.
/// A label file is written whenever the graph carries labels.
pub fn save_bundle(graph: &MultiViewGraph, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| SigilError::io(dir, e))?;
    let mut manifest = BundleManifest { edge_files: Vec::new(), feature_files: Vec::new(), label_file: None };
    for (a, view) in graph.views().iter().enumerate() {
        let e = PathBuf::from(format!("view{a}.edges"));
        let f = PathBuf::from(format!("view{a}.features"));
        write_edges(&dir.join(&e), view.adjacency())?;
        write_features(&dir.join(&f), view.features())?;
        manifest.edge_files.push(e);
        manifest.feature_files.push(f);
    }
    if let Some(labels) = graph.labels() {
        let l = PathBuf::from("labels.txt");
        write_labels(&dir.join(&l), labels)?;
        manifest.label_file = Some(l);
    }
    manifest.write(dir)
}
