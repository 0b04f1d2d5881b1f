//! Datasets: on-disk directories, LINQS citation dumps, and a synthetic
//! stochastic block model for offline runs.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_features, load_graph, load_labels, FeatureMatrix, Graph, IdMap};

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const IDMAP_FILE: &str = "idmap.csv";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(Error::Contract(format!(
                "dataset {}: graph has {n} nodes, features {} rows, labels {} entries",
                self.name,
                self.features.rows(),
                self.labels.len()
            )));
        }
        Ok(())
    }

    /// Writes the directory layout read by [`load_dataset`].
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut edges = String::new();
        for &(u, v, w) in self.graph.edges() {
            if w == 1.0 {
                edges.push_str(&format!("{u} {v}\n"));
            } else {
                edges.push_str(&format!("{u} {v} {w}\n"));
            }
        }
        let path = dir.join(EDGES_FILE);
        fs::write(&path, edges).map_err(|e| Error::io(&path, e))?;

        let mut w = csv::Writer::from_path(dir.join(FEATURES_FILE))?;
        for i in 0..self.features.rows() {
            w.write_record(self.features.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(dir.join(FEATURES_FILE), e))?;

        let mut w = csv::Writer::from_path(dir.join(LABELS_FILE))?;
        w.write_record(["node", "label"])?;
        for (v, &c) in self.labels.iter().enumerate() {
            w.write_record([v.to_string(), self.class_names[c].clone()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join(LABELS_FILE), e))?;
        Ok(())
    }
}

/// Reads `labels.csv`, `features.csv` and `edges.txt` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (labels, class_names) = load_labels(dir.join(LABELS_FILE))?;
    let features = load_features(dir.join(FEATURES_FILE))?;
    let graph = load_graph(dir.join(EDGES_FILE), labels.len())?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ds = Dataset {
        name,
        graph,
        features,
        labels,
        class_names,
    };
    ds.validate()?;
    Ok(ds)
}

/// Resolves a dataset path: absolute paths are kept, relative ones are taken
/// under `HYPERGCL_DATA_DIR` when set, else under `default_root`.
pub fn resolve_data_path(path: &Path, default_root: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("HYPERGCL_DATA_DIR") {
        Some(root) => PathBuf::from(root).join(path),
        None => default_root.join(path),
    }
}

/// Converts a LINQS `<name>.content` / `<name>.cites` pair (tab separated,
/// paper id first, label last) into the dataset directory layout. Citations
/// naming unknown papers are skipped.
pub fn convert_linqs(content: &Path, cites: &Path, out_dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(content).map_err(|e| Error::io(content, e))?;
    let mut ids = IdMap::new();
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::Parse {
                context: content.display().to_string(),
                line: line_no + 1,
                message: "expected id, features and label".into(),
            });
        }
        let id = ids.intern(fields[0]);
        if id != rows.len() {
            return Err(Error::Parse {
                context: content.display().to_string(),
                line: line_no + 1,
                message: format!("duplicate paper id {}", fields[0]),
            });
        }
        let row = fields[1..fields.len() - 1]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                context: content.display().to_string(),
                line: line_no + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
        raw_labels.push(fields[fields.len() - 1].to_string());
    }
    let features = FeatureMatrix::from_rows(&rows)?;

    let text = fs::read_to_string(cites).map_err(|e| Error::io(cites, e))?;
    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 2 {
            continue;
        }
        match (ids.get(f[0]), ids.get(f[1])) {
            (Some(u), Some(v)) => edges.push((u, v, 1.0)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} citation(s) naming papers without content rows");
    }
    let graph = Graph::from_edges(rows.len(), edges)?;

    let mut class_names: Vec<String> = raw_labels.iter().cloned().collect::<HashSet<_>>().into_iter().collect();
    class_names.sort();
    let labels = raw_labels
        .iter()
        .map(|l| class_names.binary_search(l).expect("label collected above"))
        .collect();
    let name = content
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "linqs".into());
    let ds = Dataset {
        name,
        graph,
        features,
        labels,
        class_names,
    };
    ds.write_dir(out_dir)?;
    ids.write_csv(out_dir.join(IDMAP_FILE))?;
    Ok(ds)
}

/// Planted-partition graph with block-aligned Gaussian features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmConfig {
    pub blocks: usize,
    pub block_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Mean of a block's own feature coordinates.
    pub signal: f64,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            blocks: 2,
            block_size: 30,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 16,
            signal: 1.0,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.blocks == 0 || self.block_size == 0 {
            return Err(Error::Config("sbm needs at least one non-empty block".into()));
        }
        if !prob(self.p_in) || !prob(self.p_out) {
            return Err(Error::Config("sbm edge probabilities must lie in [0,1]".into()));
        }
        if self.feature_dim < self.blocks {
            return Err(Error::Config(format!(
                "feature_dim ({}) must be at least the number of blocks ({})",
                self.feature_dim, self.blocks
            )));
        }
        if !(self.noise >= 0.0 && self.signal.is_finite() && self.noise.is_finite()) {
            return Err(Error::Config("sbm signal/noise must be finite, noise >= 0".into()));
        }
        Ok(())
    }
}

pub fn synthetic_sbm(cfg: &SbmConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.blocks * cfg.block_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = (0..n).map(|v| v / cfg.block_size).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    let graph = Graph::from_edges(n, edges)?;
    let width = cfg.feature_dim / cfg.blocks;
    let mut values = Vec::with_capacity(n * cfg.feature_dim);
    for &b in &labels {
        for k in 0..cfg.feature_dim {
            let mean = if k / width == b && k < width * cfg.blocks { cfg.signal } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            values.push(mean + cfg.noise * z);
        }
    }
    let features = FeatureMatrix::new(n, cfg.feature_dim, values)?;
    Ok(Dataset {
        name: format!("sbm-{}x{}", cfg.blocks, cfg.block_size),
        graph,
        features,
        labels,
        class_names: (0..cfg.blocks).map(|b| b.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_shape_and_determinism() {
        let cfg = SbmConfig::default();
        let a = synthetic_sbm(&cfg).unwrap();
        let b = synthetic_sbm(&cfg).unwrap();
        assert_eq!(a.num_nodes(), 60);
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 30);
    }

    #[test]
    fn dataset_dir_round_trip() {
        let ds = synthetic_sbm(&SbmConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_dir(dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.graph.edges(), ds.graph.edges());
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.features, ds.features);
    }

    #[test]
    fn linqs_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let content = dir.path().join("toy.content");
        let cites = dir.path().join("toy.cites");
        fs::write(&content, "p9\t1\t0\tTheory\np3\t0\t1\tAI\np5\t1\t1\tTheory\n").unwrap();
        fs::write(&cites, "p9\tp3\np3\tp5\np5\tp9\np3\tp9\np3\tmissing\n").unwrap();
        let out = dir.path().join("toy");
        let ds = convert_linqs(&content, &cites, &out).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        assert_eq!(ds.graph.num_edges(), 3);
        assert_eq!(ds.class_names, vec!["AI", "Theory"]);
        assert_eq!(ds.labels, vec![1, 0, 1]);
        let back = load_dataset(&out).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(IdMap::read_csv(out.join(IDMAP_FILE)).unwrap().external(1), "p3");
    }
}
