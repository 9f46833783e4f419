//! Node-classification datasets stored as a directory of text files:
//!
//! * `edges.tsv`: `i<TAB>j[<TAB>w]` per line, 0-based, undirected
//! * `labels.csv`: one integer class id per line (line number = node id), `-1` for unknown
//! * `features.csv` (or `features.csv.gz`): optional, one comma-separated row per node
//! * `split.json`: `{"train": [...], "val": [...], "test": [...]}`
//!
//! Readers are streaming and generic over [`BufRead`], so the same parsers
//! serve files, gzip streams and in-memory byte slices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DataSplit, SparseGraph};

pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURES_GZ_FILE: &str = "features.csv.gz";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone)]
pub struct NodeDataset {
    /// Raw (un-normalized) adjacency.
    pub graph: SparseGraph,
    /// `n x d` features; `d = 0` when the dataset ships none.
    pub features: Array2<f64>,
    pub labels: Vec<i64>,
    pub num_classes: usize,
    pub split: DataSplit,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Divide each feature row by its sum (rows summing to zero are left alone).
    pub row_normalize: bool,
}

impl NodeDataset {
    /// Assembles and validates a dataset.
    pub fn new(
        graph: SparseGraph,
        features: Array2<f64>,
        labels: Vec<i64>,
        split: DataSplit,
    ) -> Result<Self> {
        let n = graph.n();
        if labels.len() != n {
            return Err(Error::Inconsistent(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if features.nrows() != n {
            return Err(Error::Inconsistent(format!(
                "{} feature rows for {n} nodes",
                features.nrows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l < -1) {
            return Err(Error::Inconsistent(format!("label {bad} below -1")));
        }
        split.validate(n)?;
        for (name, set) in [("train", &split.train), ("val", &split.val)] {
            if let Some(&i) = set.iter().find(|&&i| labels[i] < 0) {
                return Err(Error::Inconsistent(format!("{name} node {i} has no label")));
            }
        }
        let num_classes = labels.iter().copied().max().unwrap_or(-1) + 1;
        if num_classes <= 0 {
            return Err(Error::Inconsistent("no labelled nodes".into()));
        }
        Ok(Self {
            graph,
            features,
            labels,
            num_classes: num_classes as usize,
            split,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// One-hot targets for the training nodes, in `split.train` order.
    pub fn train_targets(&self) -> Result<Array2<f64>> {
        one_hot(&self.labels, self.num_classes, &self.split.train)
    }
}

/// `|subset| x c` indicator matrix of `labels[subset]`.
pub fn one_hot(labels: &[i64], c: usize, subset: &[usize]) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((subset.len(), c));
    for (r, &i) in subset.iter().enumerate() {
        let l = *labels.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            n: labels.len(),
        })?;
        if l < 0 {
            return Err(Error::Inconsistent(format!("node {i} has unknown label")));
        }
        let l = l as usize;
        if l >= c {
            return Err(Error::Inconsistent(format!(
                "label {l} of node {i} not below class count {c}"
            )));
        }
        y[[r, l]] = 1.0;
    }
    Ok(y)
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

/// Reads `i<TAB>j[<TAB>w]` lines. Blank lines and `#` comments are skipped;
/// any other whitespace is accepted as a separator.
pub fn read_edges<R: BufRead>(reader: R, file: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut edges = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| parse_err(file, lineno, e.to_string()))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut fields = t.split_whitespace();
        let mut index = |what: &str| -> Result<usize> {
            let f = fields
                .next()
                .ok_or_else(|| parse_err(file, lineno, format!("missing {what} node")))?;
            f.parse::<usize>()
                .map_err(|_| parse_err(file, lineno, format!("bad {what} node {f:?}")))
        };
        let i = index("source")?;
        let j = index("target")?;
        let w = match fields.next() {
            None => 1.0,
            Some(f) => {
                let w: f64 = f
                    .parse()
                    .map_err(|_| parse_err(file, lineno, format!("bad weight {f:?}")))?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(parse_err(
                        file,
                        lineno,
                        format!("weight {w} must be positive"),
                    ));
                }
                w
            }
        };
        if fields.next().is_some() {
            return Err(parse_err(file, lineno, "too many fields"));
        }
        edges.push((i, j, w));
    }
    Ok(edges)
}

/// Reads one integer label per line; `-1` marks an unknown label.
pub fn read_labels<R: BufRead>(reader: R, file: &str) -> Result<Vec<i64>> {
    let mut labels = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| parse_err(file, lineno, e.to_string()))?;
        let t = line.trim();
        let l: i64 = t
            .parse()
            .map_err(|_| parse_err(file, lineno, format!("bad label {t:?}")))?;
        if l < -1 {
            return Err(parse_err(file, lineno, format!("label {l} below -1")));
        }
        labels.push(l);
    }
    Ok(labels)
}

/// Reads comma-separated feature rows; all rows must have equal width.
pub fn read_features<R: BufRead>(reader: R, file: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| parse_err(file, lineno, e.to_string()))?;
        let t = line.trim();
        let before = data.len();
        for f in t.split(',') {
            let f = f.trim();
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(file, lineno, format!("bad value {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(file, lineno, format!("non-finite value {f:?}")));
            }
            data.push(v);
        }
        let w = data.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(
                    file,
                    lineno,
                    format!("row has {w} values, expected {expected}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), data)
        .map_err(|e| parse_err(file, rows, e.to_string()))
}

#[derive(Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    #[serde(default)]
    val: Vec<usize>,
    #[serde(default)]
    test: Vec<usize>,
}

/// Parses `split.json`. Index validation against `n` happens in
/// [`NodeDataset::new`].
pub fn read_split<R: std::io::Read>(reader: R, file: &str) -> Result<DataSplit> {
    let s: SplitFile =
        serde_json::from_reader(reader).map_err(|e| parse_err(file, e.line(), e.to_string()))?;
    Ok(DataSplit {
        train: s.train,
        val: s.val,
        test: s.test,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

pub fn row_normalize(features: &mut Array2<f64>) {
    for mut row in features.rows_mut() {
        let s: f64 = row.sum();
        if s != 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }
}

/// Loads a dataset directory. `n` is the number of lines in `labels.csv`;
/// the class count is one more than the largest label.
pub fn load_dataset(dir: impl AsRef<Path>, opts: LoadOptions) -> Result<NodeDataset> {
    let dir = dir.as_ref();
    let labels = read_labels(open(&dir.join(LABELS_FILE))?, LABELS_FILE)?;
    let n = labels.len();
    let edges = read_edges(open(&dir.join(EDGES_FILE))?, EDGES_FILE)?;
    if let Some(&(i, j, _)) = edges.iter().find(|&&(i, j, _)| i >= n || j >= n) {
        return Err(Error::Inconsistent(format!(
            "edge ({i}, {j}) references a node beyond the {n} labelled rows"
        )));
    }
    let graph = SparseGraph::from_edges(n, edges, true)?;

    let plain = dir.join(FEATURES_FILE);
    let gz = dir.join(FEATURES_GZ_FILE);
    let mut features = if plain.exists() {
        read_features(open(&plain)?, FEATURES_FILE)?
    } else if gz.exists() {
        let f = File::open(&gz).map_err(io_err(&gz))?;
        read_features(BufReader::new(GzDecoder::new(f)), FEATURES_GZ_FILE)?
    } else {
        Array2::zeros((n, 0))
    };
    if features.nrows() != n {
        return Err(Error::Inconsistent(format!(
            "{LABELS_FILE} has {n} rows but features have {}",
            features.nrows()
        )));
    }
    if opts.row_normalize {
        row_normalize(&mut features);
    }
    let split = read_split(open(&dir.join(SPLIT_FILE))?, SPLIT_FILE)?;
    NodeDataset::new(graph, features, labels, split)
}

/// Writes `ds` in the directory format read by [`load_dataset`]. Features
/// are written uncompressed with round-trip precision.
pub fn write_dataset(ds: &NodeDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join(EDGES_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for (i, j, wt) in ds.graph.upper_entries() {
        if wt == 1.0 {
            writeln!(w, "{i}\t{j}")
        } else {
            writeln!(w, "{i}\t{j}\t{wt}")
        }
        .map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(LABELS_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for l in &ds.labels {
        writeln!(w, "{l}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    if ds.features.ncols() > 0 {
        let path = dir.join(FEATURES_FILE);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for row in ds.features.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(",")).map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }

    let path = dir.join(SPLIT_FILE);
    let json = serde_json::to_string(&ds.split).expect("split serializes");
    std::fs::write(&path, json).map_err(io_err(&path))?;
    Ok(())
}
