use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::OrderGraph;
use crate::error::{Error, Result};
use crate::nn::Dense;

/// Sparse node-id → label map, as read from a label file.
pub type LabelMap = BTreeMap<usize, u8>;

/// Locations of the edge / feature / label file trio.
#[derive(Clone, Debug)]
pub struct GraphPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

impl GraphPaths {
    pub const EDGES: &'static str = "edges.txt";
    pub const FEATURES: &'static str = "features.csv";
    pub const LABELS: &'static str = "labels.csv";

    /// Standard file names inside `dir`; the label file is optional and only
    /// picked up when it exists.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let labels = dir.join(Self::LABELS);
        Self {
            edges: dir.join(Self::EDGES),
            features: dir.join(Self::FEATURES),
            labels: labels.exists().then_some(labels),
        }
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Edge list: one whitespace-separated `u v` pair per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_edge_file(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            file: display(path),
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let mut parts = line.split_whitespace();
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err("expected exactly two node ids"));
        };
        let u = u.parse().map_err(|_| parse_err("bad node id"))?;
        let v = v.parse().map_err(|_| parse_err("bad node id"))?;
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edge_file(path: impl AsRef<Path>, graph: &OrderGraph) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (u, v) in graph.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Headerless CSV, one node per row, fixed column count.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Dense> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                file: display(path),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    Dense::from_rows(&rows)
}

pub fn write_feature_file(path: impl AsRef<Path>, features: &Dense) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..features.rows() {
        w.write_record(features.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `node_id,label` rows with label in {0,1}. An optional header row whose
/// first field is not numeric is skipped.
pub fn read_label_file(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut map = LabelMap::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse_err = |msg: String| Error::Parse {
            file: display(path),
            line: idx + 1,
            msg,
        };
        if rec.len() != 2 {
            return Err(parse_err(format!("expected 2 fields, got {}", rec.len())));
        }
        let Ok(node) = rec[0].parse::<usize>() else {
            if idx == 0 {
                continue;
            }
            return Err(parse_err(format!("bad node id {:?}", &rec[0])));
        };
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(format!("label {other:?} not in {{0,1}}"))),
        };
        if map.insert(node, label).is_some() {
            return Err(parse_err(format!("duplicate node id {node}")));
        }
    }
    Ok(map)
}

pub fn write_label_file(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "node_id,label")?;
    for (node, label) in labels {
        writeln!(w, "{node},{label}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads the file trio. The graph carries dense labels only when the label
/// file covers every node; the sparse map is returned either way.
pub fn load_graph(paths: &GraphPaths) -> Result<(OrderGraph, Option<LabelMap>)> {
    let edges = read_edge_file(&paths.edges)?;
    let features = read_feature_file(&paths.features)?;
    let n = features.rows();
    let label_map = match &paths.labels {
        Some(p) => Some(read_label_file(p)?),
        None => None,
    };
    if let Some(map) = &label_map {
        if let Some((&node, _)) = map.range(n..).next() {
            return Err(Error::NodeOutOfRange { node, n_nodes: n });
        }
    }
    let dense = label_map
        .as_ref()
        .filter(|m| m.len() == n)
        .map(|m| m.values().copied().collect());
    let graph = OrderGraph::build(&edges, features, dense)?;
    graph.check_invariants()?;
    Ok((graph, label_map))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trio_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let feats = Dense::from_rows(&[[0.5, -1.25], [3.0, 1e-7], [0.1, 2.0]]).unwrap();
        let g = OrderGraph::build(&[(0, 1), (2, 1)], feats, Some(vec![0, 1, 0])).unwrap();
        write_edge_file(dir.path().join(GraphPaths::EDGES), &g).unwrap();
        write_feature_file(dir.path().join(GraphPaths::FEATURES), g.features()).unwrap();
        let labels: LabelMap = g.labels().unwrap().iter().copied().enumerate().collect();
        write_label_file(dir.path().join(GraphPaths::LABELS), &labels).unwrap();

        let (back, map) = load_graph(&GraphPaths::in_dir(dir.path())).unwrap();
        assert_eq!(back, g);
        assert_eq!(map.unwrap(), labels);
    }

    #[test]
    fn partial_labels_stay_sparse() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(GraphPaths::EDGES), "0 1\n# comment\n\n1 2\n").unwrap();
        fs::write(dir.path().join(GraphPaths::FEATURES), "1,2\n3,4\n5,6\n").unwrap();
        fs::write(dir.path().join(GraphPaths::LABELS), "node_id,label\n2,1\n").unwrap();
        let (g, map) = load_graph(&GraphPaths::in_dir(dir.path())).unwrap();
        assert!(g.labels().is_none());
        assert_eq!(map.unwrap().into_iter().collect::<Vec<_>>(), vec![(2, 1)]);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("e1"), "0 1 2\n").unwrap();
        assert!(matches!(read_edge_file(p.join("e1")), Err(Error::Parse { line: 1, .. })));
        fs::write(p.join("f1"), "1,2\n3\n").unwrap();
        assert!(read_feature_file(p.join("f1")).is_err());
        fs::write(p.join("l1"), "0,2\n").unwrap();
        assert!(read_label_file(p.join("l1")).is_err());
        fs::write(p.join("l2"), "0,1\n0,0\n").unwrap();
        assert!(read_label_file(p.join("l2")).is_err());

        fs::write(p.join(GraphPaths::EDGES), "0 7\n").unwrap();
        fs::write(p.join(GraphPaths::FEATURES), "1\n2\n").unwrap();
        let paths = GraphPaths {
            labels: None,
            ..GraphPaths::in_dir(p)
        };
        assert!(matches!(load_graph(&paths), Err(Error::EndpointOutOfRange { node: 7, .. })));
    }
}
