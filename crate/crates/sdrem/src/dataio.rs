//! Graph/feature ingestion, train/test splitting, run configuration and
//! output persistence.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdremError};
use crate::model::{FeatureMatrix, HyperParams, Mode, ModelState, PosteriorTrace, SparseGraph};
use crate::predictor::EvalResult;
use crate::randkit::RngStream;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SdremError + '_ {
    move |e| SdremError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Run configuration: paths, architecture knobs and hyper-priors.
/// Unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub edges: PathBuf,
    pub features: Option<PathBuf>,
    pub out: PathBuf,
    pub k: usize,
    pub l: usize,
    pub mode: Mode,
    pub e0: f64,
    pub f0: f64,
    pub g0: f64,
    pub h0: f64,
    pub k_m: Option<f64>,
    pub theta_m: f64,
    pub k_alpha: f64,
    pub theta_alpha: f64,
    pub k2: f64,
    pub theta2: f64,
    pub k3: f64,
    pub theta3: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub train_ratio: f64,
    pub negatives_per_positive: usize,
    pub undirected: bool,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        RunConfig {
            edges: PathBuf::new(),
            features: None,
            out: PathBuf::from("run"),
            k: hp.k,
            l: hp.l,
            mode: hp.mode,
            e0: hp.e0,
            f0: hp.f0,
            g0: hp.g0,
            h0: hp.h0,
            k_m: hp.k_m,
            theta_m: hp.theta_m,
            k_alpha: hp.k_alpha,
            theta_alpha: hp.theta_alpha,
            k2: hp.k2,
            theta2: hp.theta2,
            k3: hp.k3,
            theta3: hp.theta3,
            iterations: hp.iterations,
            burn_in: hp.burn_in,
            thin: hp.thin,
            seed: hp.seed,
            train_ratio: 0.9,
            negatives_per_positive: 1,
            undirected: false,
            threads: 1,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let cfg: RunConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| SdremError::InvalidParameter(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(SdremError::InvalidParameter(format!(
                "train_ratio {} must be in (0, 1]",
                self.train_ratio
            )));
        }
        self.hyper_params().validate()
    }

    /// The path-free subset of the config that determines the fit; this is
    /// what gets persisted, so outputs are byte-identical across runs that
    /// differ only in file locations.
    pub fn settings(&self) -> FitSettings {
        FitSettings {
            hyper: self.hyper_params(),
            train_ratio: self.train_ratio,
            negatives_per_positive: self.negatives_per_positive,
            undirected: self.undirected,
        }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            k: self.k,
            l: self.l,
            mode: self.mode,
            e0: self.e0,
            f0: self.f0,
            g0: self.g0,
            h0: self.h0,
            k_m: self.k_m,
            theta_m: self.theta_m,
            k_alpha: self.k_alpha,
            theta_alpha: self.theta_alpha,
            k2: self.k2,
            theta2: self.theta2,
            k3: self.k3,
            theta3: self.theta3,
            iterations: self.iterations,
            burn_in: self.burn_in,
            seed: self.seed,
            thin: self.thin,
        }
    }
}

/// Parse a line-oriented edge list: one `src<TAB>dst` pair per line,
/// 0-indexed, `#` comments ignored. Node count is inferred from the largest
/// index. Duplicates collapse; self-loops are dropped (counted).
pub fn load_edges(path: &Path, undirected: bool) -> Result<SparseGraph> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    let mut max_node = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.ok_or(())
                .and_then(|t| t.trim().parse::<usize>().map_err(|_| ()))
                .map_err(|_| SdremError::Parse {
                    line: lineno + 1,
                    msg: format!("expected `src<TAB>dst` integers, got '{trimmed}'"),
                })
        };
        let src = parse(parts.next())?;
        let dst = parse(parts.next())?;
        max_node = max_node.max(src).max(dst);
        edges.push((src, dst));
    }
    let n_nodes = if edges.is_empty() { 0 } else { max_node + 1 };
    SparseGraph::new(n_nodes, edges, !undirected, HashSet::new())
}

/// Parse sparse feature triplets `node<TAB>feature<TAB>value`.
pub fn load_features(path: &Path, n_nodes: usize) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut triplets = Vec::new();
    let mut max_feat: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split('\t').collect();
        let err = |msg: String| SdremError::Parse {
            line: lineno + 1,
            msg,
        };
        if parts.len() != 3 {
            return Err(err(format!(
                "expected `node<TAB>feature<TAB>value`, got '{trimmed}'"
            )));
        }
        let node: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad node index '{}'", parts[0])))?;
        let feat: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad feature index '{}'", parts[1])))?;
        let value: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad value '{}'", parts[2])))?;
        if node >= n_nodes {
            return Err(err(format!("node {node} >= {n_nodes}")));
        }
        if value < 0.0 {
            return Err(err(format!("negative feature value {value}")));
        }
        max_feat = Some(max_feat.map_or(feat, |m| m.max(feat)));
        triplets.push((node, feat, value));
    }
    let n_features = max_feat.map_or(0, |m| m + 1);
    let fm = FeatureMatrix::from_triplets(n_nodes, n_features, triplets)?;
    if n_features > 0 {
        eprintln!(
            "features: D={} density {:.4}%",
            n_features,
            100.0 * fm.nnz() as f64 / (n_nodes * n_features) as f64
        );
    }
    Ok(fm)
}

/// Per-row holdout: ceil((1 - train_ratio) * out-degree) positives move to
/// test; for each, `negatives_per_positive` same-row non-edges are sampled
/// as test negatives. For undirected graphs both orientations of a held-out
/// positive move together.
pub fn make_split(
    graph: &SparseGraph,
    train_ratio: f64,
    negatives_per_positive: usize,
    rng: &RngStream,
) -> Result<(SparseGraph, Vec<((usize, usize), bool)>)> {
    if graph.n_nodes == 0 {
        return Err(SdremError::InvalidParameter("empty graph".into()));
    }
    let full_edges = graph.edge_set();
    let mut r = rng.substream(&[0xdead, 0x5711]);
    let mut held_out: HashSet<(usize, usize)> = HashSet::new();
    let mut test_dyads: Vec<((usize, usize), bool)> = Vec::new();

    let mut out_adj: Vec<Vec<usize>> = vec![Vec::new(); graph.n_nodes];
    for &(s, d) in &graph.edges {
        out_adj[s].push(d);
    }

    use rand::seq::SliceRandom;
    use rand::Rng;
    for i in 0..graph.n_nodes {
        let deg = out_adj[i].len();
        if deg == 0 {
            continue;
        }
        let n_test = ((1.0 - train_ratio) * deg as f64).ceil() as usize;
        if n_test == 0 {
            continue;
        }
        let mut candidates = out_adj[i].clone();
        candidates.shuffle(&mut r);
        let mut taken = 0;
        for &j in &candidates {
            if taken >= n_test {
                break;
            }
            if held_out.contains(&(i, j)) {
                continue;
            }
            held_out.insert((i, j));
            test_dyads.push(((i, j), true));
            if !graph.directed {
                held_out.insert((j, i));
            }
            taken += 1;
        }
        // same-row negatives, without replacement
        let want = taken * negatives_per_positive;
        let mut found = 0;
        let mut attempts = 0;
        let mut used: HashSet<usize> = HashSet::new();
        while found < want && attempts < 50 * want.max(1) + 100 {
            attempts += 1;
            let j = r.random_range(0..graph.n_nodes);
            if j == i || used.contains(&j) || full_edges.contains(&(i, j)) {
                continue;
            }
            used.insert(j);
            held_out.insert((i, j));
            test_dyads.push(((i, j), false));
            found += 1;
        }
    }

    let train_edges: Vec<(usize, usize)> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| !held_out.contains(e))
        .collect();
    let train = SparseGraph::new(graph.n_nodes, train_edges, graph.directed, held_out)?;
    test_dyads.sort_unstable();
    Ok((train, test_dyads))
}

/// Everything that determines a fit apart from input/output locations.
#[derive(Serialize, Deserialize, PartialEq, Debug, Clone)]
pub struct FitSettings {
    pub hyper: HyperParams,
    pub train_ratio: f64,
    pub negatives_per_positive: usize,
    pub undirected: bool,
}

/// Versioned snapshot for chain resumption and post-hoc evaluation.
#[derive(Serialize, Deserialize, PartialEq, Debug, Clone)]
pub struct Snapshot {
    pub version: u32,
    pub n_nodes: usize,
    pub settings: FitSettings,
    pub state: ModelState,
    pub trace: PosteriorTrace,
}

pub const SNAPSHOT_VERSION: u32 = 1;
const SNAPSHOT_MAGIC: &[u8; 8] = b"SDREMBIN";

pub fn save_snapshot(snapshot: &Snapshot, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(SNAPSHOT_MAGIC).map_err(io_err(path))?;
    bincode::serialize_into(&mut w, snapshot)
        .map_err(|e| SdremError::Serialize(e.to_string()))?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut magic = [0u8; 8];
    std::io::Read::read_exact(&mut r, &mut magic).map_err(io_err(path))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SdremError::Serialize(format!(
            "{} is not a state snapshot",
            path.display()
        )));
    }
    let snap: Snapshot =
        bincode::deserialize_from(&mut r).map_err(|e| SdremError::Serialize(e.to_string()))?;
    if snap.version != SNAPSHOT_VERSION {
        return Err(SdremError::Serialize(format!(
            "snapshot version {} unsupported (expected {SNAPSHOT_VERSION})",
            snap.version
        )));
    }
    Ok(snap)
}

fn fmt17(v: f64) -> String {
    format!("{:.16e}", v)
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    auc: Option<f64>,
    mean_nll: f64,
    n_test_pos: usize,
    n_test_neg: usize,
    n_retained: usize,
    prob_clamp: f64,
    settings: &'a FitSettings,
}

/// Write a metrics.json document.
pub fn write_metrics(
    trace: &PosteriorTrace,
    eval: &EvalResult,
    settings: &FitSettings,
    path: &Path,
) -> Result<()> {
    let doc = MetricsDoc {
        auc: eval.auc,
        mean_nll: eval.mean_nll,
        n_test_pos: eval.n_test_pos,
        n_test_neg: eval.n_test_neg,
        n_retained: trace.n_retained,
        prob_clamp: crate::predictor::PROB_CLAMP,
        settings,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| SdremError::Serialize(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(path))
}

/// Write metrics.json, predictions.csv, per-layer pi CSVs, lambda.csv,
/// latent_counts.csv and state.bin into `out_dir`.
pub fn save_outputs(
    trace: &PosteriorTrace,
    eval: &EvalResult,
    state: &ModelState,
    settings: &FitSettings,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_metrics(trace, eval, settings, &out_dir.join("metrics.json"))?;

    let pred_path = out_dir.join("predictions.csv");
    let mut w = BufWriter::new(File::create(&pred_path).map_err(io_err(&pred_path))?);
    writeln!(w, "i,j,prob").map_err(io_err(&pred_path))?;
    for &((i, j), p) in &trace.mean_link_prob {
        writeln!(w, "{i},{j},{}", fmt17(p)).map_err(io_err(&pred_path))?;
    }

    for (li, pi) in state.pi.iter().enumerate() {
        let path = out_dir.join(format!("pi_layer_{}.csv", li + 1));
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for row in pi.rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
            writeln!(w, "{}", line.join(",")).map_err(io_err(&path))?;
        }
    }

    let lambda_path = out_dir.join("lambda.csv");
    let mut w = BufWriter::new(File::create(&lambda_path).map_err(io_err(&lambda_path))?);
    for row in state.lambda.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err(&lambda_path))?;
    }

    let counts_path = out_dir.join("latent_counts.csv");
    let mut w = BufWriter::new(File::create(&counts_path).map_err(io_err(&counts_path))?);
    writeln!(w, "layer,mean_count_per_node").map_err(io_err(&counts_path))?;
    let l = trace.mean_latent_counts.len();
    for (idx, &c) in trace.mean_latent_counts.iter().enumerate() {
        writeln!(w, "{},{}", l - idx, fmt17(c)).map_err(io_err(&counts_path))?;
    }

    let snap = Snapshot {
        version: SNAPSHOT_VERSION,
        n_nodes: state.n_nodes(),
        settings: settings.clone(),
        state: state.clone(),
        trace: trace.clone(),
    };
    save_snapshot(&snap, &out_dir.join("state.bin"))
}

/// Write an edge list in the same format `load_edges` reads.
pub fn save_edges(edges: &[(usize, usize)], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "# src\tdst").map_err(io_err(path))?;
    for &(s, d) in edges {
        writeln!(w, "{s}\t{d}").map_err(io_err(path))?;
    }
    Ok(())
}

/// Write feature triplets in the same format `load_features` reads.
pub fn save_features(features: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "# node\tfeature\tvalue").map_err(io_err(path))?;
    for (i, row) in features.rows.iter().enumerate() {
        for &(d, v) in row {
            writeln!(w, "{i}\t{d}\t{}", fmt17(v)).map_err(io_err(path))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_edges_basic() {
        let f = write_tmp("# comment\n0\t1\n1\t2\n");
        let g = load_edges(f.path(), false).unwrap();
        assert_eq!(g.n_nodes, 3);
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn load_edges_reports_bad_line() {
        let f = write_tmp("a\tb\n");
        match load_edges(f.path(), false) {
            Err(SdremError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_missing_file_names_path() {
        let err = load_edges(Path::new("/no/such/file.tsv"), false).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.tsv"));
    }

    #[test]
    fn load_features_rejects_negative() {
        let f = write_tmp("0\t0\t-1\n");
        assert!(load_features(f.path(), 2).is_err());
        let f = write_tmp("5\t0\t1\n");
        assert!(load_features(f.path(), 2).is_err());
        let f = write_tmp("");
        let fm = load_features(f.path(), 2).unwrap();
        assert!(fm.is_empty());
    }

    #[test]
    fn edges_roundtrip_idempotent() {
        let edges = vec![(0, 1), (1, 2), (2, 0)];
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_edges(&edges, tmp.path()).unwrap();
        let g = load_edges(tmp.path(), false).unwrap();
        assert_eq!(g.edges, edges);
        save_edges(&g.edges, tmp.path()).unwrap();
        let g2 = load_edges(tmp.path(), false).unwrap();
        assert_eq!(g.edges, g2.edges);
    }

    fn ring_graph(n: usize, deg: usize) -> SparseGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for d in 1..=deg {
                edges.push((i, (i + d) % n));
            }
        }
        SparseGraph::new(n, edges, true, HashSet::new()).unwrap()
    }

    #[test]
    fn split_ratio_one_keeps_everything() {
        let g = ring_graph(10, 2);
        let (train, test) = make_split(&g, 1.0, 1, &RngStream::new(1)).unwrap();
        assert_eq!(train.n_edges(), g.n_edges());
        assert!(test.is_empty());
    }

    #[test]
    fn split_holds_one_of_ten_per_row() {
        let g = ring_graph(30, 10);
        let (train, test) = make_split(&g, 0.9, 1, &RngStream::new(2)).unwrap();
        let pos: Vec<_> = test.iter().filter(|&&(_, l)| l).collect();
        assert_eq!(pos.len(), 30); // exactly one per row
        assert_eq!(train.n_edges(), g.n_edges() - 30);
        // no leakage between train edges and mask
        for e in &train.edges {
            assert!(!train.test_mask.contains(e));
        }
        for &((i, j), label) in &test {
            if label {
                assert!(g.edge_set().contains(&(i, j)));
            } else {
                assert!(!g.edge_set().contains(&(i, j)));
            }
        }
    }

    #[test]
    fn split_is_deterministic() {
        let g = ring_graph(20, 5);
        let (t1, d1) = make_split(&g, 0.8, 2, &RngStream::new(3)).unwrap();
        let (t2, d2) = make_split(&g, 0.8, 2, &RngStream::new(3)).unwrap();
        assert_eq!(t1.edges, t2.edges);
        assert_eq!(d1, d2);
    }

    #[test]
    fn snapshot_roundtrip_is_bit_identical() {
        use crate::model::{init_state, HyperParams};
        let g = ring_graph(6, 2);
        let f = FeatureMatrix::empty(6);
        let hp = HyperParams {
            k: 3,
            l: 2,
            ..HyperParams::default()
        };
        let state = init_state(&g, &f, &hp, &RngStream::new(4)).unwrap();
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            n_nodes: 6,
            settings: RunConfig::default().settings(),
            state,
            trace: PosteriorTrace::new(&[(0, 1)], 2, 4),
        };
        let tmp = tempfile::NamedTempFile::new().unwrap();
        save_snapshot(&snap, tmp.path()).unwrap();
        let back = load_snapshot(tmp.path()).unwrap();
        assert_eq!(snap, back);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let f = write_tmp(r#"{"edges": "e.tsv", "bogus": 1}"#);
        let err = RunConfig::from_file(f.path()).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
