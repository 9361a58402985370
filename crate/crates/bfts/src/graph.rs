//! Graph representation, degree/normalization utilities, synthetic
//! stochastic-block-model benchmark, and text-format loaders.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::textio::{format_f64, parse_bit, parse_f64, parse_usize, read_to_string, write_file};

/// Fraction of nodes assigned to the training split by the generator.
pub const TRAIN_FRAC: f64 = 0.3;
/// Fraction of nodes assigned to the validation split by the generator.
pub const VAL_FRAC: f64 = 0.2;

/// Immutable undirected graph with node features, binary labels, binary
/// sensitive attributes, and observation/split masks.
///
/// Ground truth (labels and sensitive values) exists for every node;
/// `observed_mask` records which sensitive values are visible to training.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<u8>,
    sensitive: Vec<u8>,
    observed_mask: Vec<bool>,
    train_mask: Vec<bool>,
    val_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

impl Graph {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<u8>,
        sensitive: Vec<u8>,
        observed_mask: Vec<bool>,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self> {
        if features.rows() != n_nodes {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                n_nodes
            )));
        }
        for (name, len) in [
            ("labels", labels.len()),
            ("sensitive", sensitive.len()),
            ("observed_mask", observed_mask.len()),
            ("train_mask", train_mask.len()),
            ("val_mask", val_mask.len()),
            ("test_mask", test_mask.len()),
        ] {
            if len != n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "{name} has length {len} for {n_nodes} nodes"
                )));
            }
        }
        for (i, &v) in labels.iter().chain(sensitive.iter()).enumerate() {
            if v > 1 {
                return Err(Error::InvalidGraph(format!(
                    "binary attribute out of range at position {i}: {v}"
                )));
            }
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u},{v}) out of range for {n_nodes} nodes"
                )));
            }
            let key = if u < v { (u, v) } else { (v, u) };
            if !seen.insert(key) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u},{v})")));
            }
        }
        for i in 0..n_nodes {
            let memberships = train_mask[i] as u8 + val_mask[i] as u8 + test_mask[i] as u8;
            if memberships > 1 {
                return Err(Error::InvalidGraph(format!(
                    "node {i} belongs to multiple splits"
                )));
            }
        }
        Ok(Graph {
            n_nodes,
            edges,
            features,
            labels,
            sensitive,
            observed_mask,
            train_mask,
            val_mask,
            test_mask,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed_mask
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn val_mask(&self) -> &[bool] {
        &self.val_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn n_observed(&self) -> usize {
        self.observed_mask.iter().filter(|&&b| b).count()
    }

    /// Copy of the graph with a different observation mask.
    pub fn with_observed_mask(&self, observed_mask: Vec<bool>) -> Result<Graph> {
        if observed_mask.len() != self.n_nodes {
            return Err(Error::InvalidGraph(format!(
                "observed mask has length {} for {} nodes",
                observed_mask.len(),
                self.n_nodes
            )));
        }
        let mut g = self.clone();
        g.observed_mask = observed_mask;
        Ok(g)
    }

    /// Per-node count of incident edges.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Adjacency lists (undirected, both directions).
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Symmetrically normalized propagation matrix with self-loops:
    /// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of
    /// `A + I`. Dense; symmetric; entries in [0, 1].
    pub fn normalized_adjacency(&self) -> Matrix {
        let n = self.n_nodes;
        let deg = self.degrees();
        let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d as f64 + 1.0).sqrt())).collect();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
        }
        for &(u, v) in &self.edges {
            let w = inv_sqrt[u] * inv_sqrt[v];
            m.set(u, v, w);
            m.set(v, u, w);
        }
        m
    }

    /// Newman's attribute assortativity over class labels, computed from
    /// the label mixing matrix of edge endpoints. 1 on a graph whose edges
    /// all join equal labels (including the all-same-label case where the
    /// formula degenerates to 0/0), -1 on a label-bipartite graph.
    pub fn label_assortativity(&self) -> Result<f64> {
        if self.edges.is_empty() {
            return Err(Error::Degenerate(
                "assortativity is undefined on an edgeless graph".into(),
            ));
        }
        // counts[i][j]: directed edge-ends with tail label i, head label
        // j; each undirected edge counts in both directions. Normalizing
        // integer counts once keeps the degenerate cases exact.
        let mut counts = [[0u64; 2]; 2];
        for &(u, v) in &self.edges {
            let (lu, lv) = (self.labels[u] as usize, self.labels[v] as usize);
            counts[lu][lv] += 1;
            counts[lv][lu] += 1;
        }
        let total = (2 * self.edges.len()) as f64;
        let mut e = [[0.0f64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                e[i][j] = counts[i][j] as f64 / total;
            }
        }
        let trace = e[0][0] + e[1][1];
        let a0 = e[0][0] + e[0][1];
        let a1 = e[1][0] + e[1][1];
        let b0 = e[0][0] + e[1][0];
        let b1 = e[0][1] + e[1][1];
        let ab = a0 * b0 + a1 * b1;
        if (1.0 - ab).abs() < 1e-15 {
            return Ok(1.0);
        }
        Ok((trace - ab) / (1.0 - ab))
    }
}

/// Configuration for the stochastic block model generator.
///
/// Block 0 is the majority/desired class (label 1); every other block gets
/// label 0. The sensitive attribute is drawn as Bernoulli(`p_bias`) for
/// label-1 nodes and Bernoulli(1 - `p_bias`) otherwise. The first
/// `n_features - n_noise` feature columns carry `gamma * y` plus unit
/// Gaussian noise; the rest are pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub p_bias: f64,
    pub n_features: usize,
    pub n_noise: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            block_sizes: vec![600, 400],
            p_in: 0.08,
            p_out: 0.002,
            p_bias: 0.7,
            n_features: 20,
            n_noise: 8,
            gamma: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let n: usize = self.block_sizes.iter().sum();
        if n == 0 {
            return Err(Error::InvalidConfig("block sizes sum to zero nodes".into()));
        }
        for (name, p) in [
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("p_bias", self.p_bias),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} not in [0,1]")));
            }
        }
        if self.n_noise > self.n_features {
            return Err(Error::InvalidConfig(format!(
                "n_noise {} exceeds n_features {}",
                self.n_noise, self.n_features
            )));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.block_sizes.iter().sum()
    }
}

/// Sample a graph from the block model. Deterministic per seed; edge,
/// sensitive-attribute, feature, and split sampling draw from independent
/// substreams, so changing `n_features` does not perturb the edge set.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n_nodes();

    let mut block = vec![0usize; n];
    let mut next = 0usize;
    for (b, &size) in cfg.block_sizes.iter().enumerate() {
        for _ in 0..size {
            block[next] = b;
            next += 1;
        }
    }
    let labels: Vec<u8> = block.iter().map(|&b| u8::from(b == 0)).collect();

    let mut edge_rng = stream_rng(cfg.seed, Stream::SbmEdges);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block[u] == block[v] { cfg.p_in } else { cfg.p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut s_rng = stream_rng(cfg.seed, Stream::SbmSensitive);
    let sensitive: Vec<u8> = labels
        .iter()
        .map(|&y| {
            let p = if y == 1 { cfg.p_bias } else { 1.0 - cfg.p_bias };
            u8::from(s_rng.random::<f64>() < p)
        })
        .collect();

    let mut f_rng = stream_rng(cfg.seed, Stream::SbmFeatures);
    let n_signal = cfg.n_features - cfg.n_noise;
    let features = Matrix::from_fn(n, cfg.n_features, |r, c| {
        let noise: f64 = f_rng.sample(StandardNormal);
        if c < n_signal {
            cfg.gamma * labels[r] as f64 + noise
        } else {
            noise
        }
    });

    let mut mask_rng = stream_rng(cfg.seed, Stream::SbmMasks);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut mask_rng);
    let n_train = ((n as f64) * TRAIN_FRAC).round() as usize;
    let n_val = ((n as f64) * VAL_FRAC).round() as usize;
    let mut train_mask = vec![false; n];
    let mut val_mask = vec![false; n];
    let mut test_mask = vec![false; n];
    for (rank, &node) in order.iter().enumerate() {
        if rank < n_train {
            train_mask[node] = true;
        } else if rank < n_train + n_val {
            val_mask[node] = true;
        } else {
            test_mask[node] = true;
        }
    }

    Graph::new(
        n,
        edges,
        features,
        labels,
        sensitive,
        vec![true; n],
        train_mask,
        val_mask,
        test_mask,
    )
}

// ---- persistence ------------------------------------------------------

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
const LABELS_HEADER: &str = "node,y,s,observed,train,val,test";

/// Write `edges.tsv`, `features.csv`, and `labels.csv` under `dir`.
pub fn save_graph(g: &Graph, dir: &Path) -> Result<()> {
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        let (lo, hi) = if u < v { (u, v) } else { (v, u) };
        edges.push_str(&format!("{lo}\t{hi}\n"));
    }
    write_file(&dir.join(EDGES_FILE), &edges)?;

    let mut feats = String::new();
    for r in 0..g.n_nodes() {
        let row: Vec<String> = g.features().row(r).iter().map(|&v| format_f64(v)).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write_file(&dir.join(FEATURES_FILE), &feats)?;

    let mut labels = String::from(LABELS_HEADER);
    labels.push('\n');
    for i in 0..g.n_nodes() {
        labels.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i,
            g.labels()[i],
            g.sensitive()[i],
            g.observed_mask()[i] as u8,
            g.train_mask()[i] as u8,
            g.val_mask()[i] as u8,
            g.test_mask()[i] as u8,
        ));
    }
    write_file(&dir.join(LABELS_FILE), &labels)
}

/// Load a graph from its three files. `save_graph` followed by
/// `load_graph` is the identity.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<Graph> {
    // labels first: they define the node count
    let label_text = read_to_string(label_path)?;
    let mut lines = label_text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LABELS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                path: label_path.display().to_string(),
                line: 1,
                msg: format!("bad header {h:?}, expected {LABELS_HEADER:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: label_path.display().to_string(),
                line: 1,
                msg: "empty label file".into(),
            })
        }
    }
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    let mut observed = Vec::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Parse {
                path: label_path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 7 fields, got {}", parts.len()),
            });
        }
        let node = parse_usize(parts[0], label_path, lineno + 1)?;
        if node != labels.len() {
            return Err(Error::Parse {
                path: label_path.display().to_string(),
                line: lineno + 1,
                msg: format!("node ids must be dense and ordered; expected {}, got {node}", labels.len()),
            });
        }
        labels.push(parse_bit(parts[1], label_path, lineno + 1)? as u8);
        sensitive.push(parse_bit(parts[2], label_path, lineno + 1)? as u8);
        observed.push(parse_bit(parts[3], label_path, lineno + 1)?);
        train.push(parse_bit(parts[4], label_path, lineno + 1)?);
        val.push(parse_bit(parts[5], label_path, lineno + 1)?);
        test.push(parse_bit(parts[6], label_path, lineno + 1)?);
    }
    let n = labels.len();

    let feature_text = read_to_string(feature_path)?;
    let mut rows: Vec<f64> = Vec::new();
    let mut n_cols: Option<usize> = None;
    let mut n_rows = 0usize;
    for (lineno, line) in feature_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        match n_cols {
            None => n_cols = Some(parts.len()),
            Some(c) if c != parts.len() => {
                return Err(Error::Parse {
                    path: feature_path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected {c} columns, got {}", parts.len()),
                })
            }
            _ => {}
        }
        for p in parts {
            rows.push(parse_f64(p, feature_path, lineno + 1)?);
        }
        n_rows += 1;
    }
    if n_rows != n {
        return Err(Error::InvalidGraph(format!(
            "inconsistent node counts: {n} label rows, {n_rows} feature rows"
        )));
    }
    let features = Matrix::from_vec(n_rows, n_cols.unwrap_or(0), rows)?;

    let edge_text = read_to_string(edge_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in edge_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                path: edge_path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 'u<TAB>v', got {line:?}"),
            });
        }
        let u = parse_usize(parts[0], edge_path, lineno + 1)?;
        let v = parse_usize(parts[1], edge_path, lineno + 1)?;
        if u >= v {
            return Err(Error::Parse {
                path: edge_path.display().to_string(),
                line: lineno + 1,
                msg: format!("edges must satisfy u < v, got ({u},{v})"),
            });
        }
        edges.push((u, v));
    }

    Graph::new(n, edges, features, labels, sensitive, observed, train, val, test)
}

/// Load from the standard file names under one directory.
pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    load_graph(
        &dir.join(EDGES_FILE),
        &dir.join(FEATURES_FILE),
        &dir.join(LABELS_FILE),
    )
}
